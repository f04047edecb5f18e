//! Bin-wise primitives behind the sketch algebra.
//!
//! Every kernel has a scalar reference implementation and a lane-parallel one
//! (AVX2 or AVX-512 on x86_64, picked at runtime). The two paths must agree
//! bit-for-bit; the lane paths exist only for speed.
//!
//! Masks are `u64` words, bin `i` at bit `i % 64` of word `i / 64`.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::KernelError;
use crate::hash::{bin_value, BIN_ALIGNMENT};

/// Value of a MinHash bin that has not seen any element.
pub const EMPTY_SENTINEL: u32 = u32::MAX;

/// Environment variable that forces the scalar path when set to `scalar`.
pub const KERNEL_ENV: &str = "DEVREACH_KERNELS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelPath {
    ScalarReference,
    LaneParallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Isa {
    Scalar,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelDispatch {
    isa: Isa,
}

pub fn mask_words(bins: usize) -> usize {
    bins.div_ceil(64)
}

fn check_pair(left: usize, right: usize) -> Result<(), KernelError> {
    if left != right {
        return Err(KernelError::LengthMismatch { left, right });
    }
    Ok(())
}

fn check_aligned(len: usize) -> Result<(), KernelError> {
    if len % BIN_ALIGNMENT != 0 {
        return Err(KernelError::Alignment(len));
    }
    Ok(())
}

fn check_mask(mask: &[u64], bins: usize) -> Result<(), KernelError> {
    let expected = mask_words(bins);
    if mask.len() != expected {
        return Err(KernelError::MaskLength {
            words: mask.len(),
            expected,
        });
    }
    Ok(())
}

impl KernelDispatch {
    /// Widest lane path the CPU supports.
    pub fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            if is_x86_feature_detected!("avx512f")
                && is_x86_feature_detected!("avx512bw")
                && is_x86_feature_detected!("avx512dq")
                && is_x86_feature_detected!("avx2")
            {
                return Self { isa: Isa::Avx512 };
            }
            if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("sse4.1") {
                return Self { isa: Isa::Avx2 };
            }
        }
        Self::scalar()
    }

    pub fn scalar() -> Self {
        Self { isa: Isa::Scalar }
    }

    /// AVX2 even when AVX-512 is present; `None` if the CPU lacks AVX2.
    pub fn avx2() -> Option<Self> {
        #[cfg(target_arch = "x86_64")]
        {
            if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("sse4.1") {
                return Some(Self { isa: Isa::Avx2 });
            }
        }
        None
    }

    /// Process-wide dispatch, detected once.
    pub fn active() -> &'static Self {
        static ACTIVE: OnceLock<KernelDispatch> = OnceLock::new();
        ACTIVE.get_or_init(|| match std::env::var(KERNEL_ENV) {
            Ok(v) if v.eq_ignore_ascii_case("scalar") => Self::scalar(),
            _ => Self::detect(),
        })
    }

    pub fn path(&self) -> KernelPath {
        match self.isa {
            Isa::Scalar => KernelPath::ScalarReference,
            #[cfg(target_arch = "x86_64")]
            _ => KernelPath::LaneParallel,
        }
    }

    /// u32 values processed per lane operation.
    pub fn lane_width(&self) -> usize {
        match self.isa {
            Isa::Scalar => 1,
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => 8,
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => 16,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.isa {
            Isa::Scalar => "scalar",
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => "avx2",
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => "avx512",
        }
    }

    /// Bit `i` set iff `a[i] == b[i]`. Overwrites every word of `out`.
    pub fn equal_mask_into(&self, a: &[u32], b: &[u32], out: &mut [u64]) -> Result<(), KernelError> {
        check_pair(a.len(), b.len())?;
        check_aligned(a.len())?;
        check_mask(out, a.len())?;
        match self.isa {
            Isa::Scalar => scalar::equal_mask(a, b, out),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { x86::equal_mask_avx2(a, b, out) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe { x86::equal_mask_avx512(a, b, out) },
        }
        Ok(())
    }

    pub fn equal_mask(&self, a: &[u32], b: &[u32]) -> Result<Vec<u64>, KernelError> {
        let mut out = vec![0; mask_words(a.len())];
        self.equal_mask_into(a, b, &mut out)?;
        Ok(out)
    }

    /// Element-wise unsigned minimum.
    pub fn min_into(&self, a: &[u32], b: &[u32], out: &mut [u32]) -> Result<(), KernelError> {
        check_pair(a.len(), b.len())?;
        check_pair(a.len(), out.len())?;
        match self.isa {
            Isa::Scalar => scalar::min(a, b, out),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { x86::min_avx2(a, b, out) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe { x86::min_avx512(a, b, out) },
        }
        Ok(())
    }

    pub fn min(&self, a: &[u32], b: &[u32]) -> Result<Vec<u32>, KernelError> {
        let mut out = vec![0; a.len()];
        self.min_into(a, b, &mut out)?;
        Ok(out)
    }

    /// `acc[i] = min(acc[i], b[i])`.
    pub fn min_assign(&self, acc: &mut [u32], b: &[u32]) -> Result<(), KernelError> {
        check_pair(acc.len(), b.len())?;
        match self.isa {
            Isa::Scalar => scalar::min_assign(acc, b),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { x86::min_assign_avx2(acc, b) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe { x86::min_assign_avx512(acc, b) },
        }
        Ok(())
    }

    /// `acc[i] = max(acc[i], b[i])` over HLL registers.
    pub fn max_assign_u8(&self, acc: &mut [u8], b: &[u8]) -> Result<(), KernelError> {
        check_pair(acc.len(), b.len())?;
        match self.isa {
            Isa::Scalar => scalar::max_assign_u8(acc, b),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { x86::max_assign_u8_avx2(acc, b) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe { x86::max_assign_u8_avx512(acc, b) },
        }
        Ok(())
    }

    pub fn popcount(&self, mask: &[u64]) -> u64 {
        match self.isa {
            Isa::Scalar => scalar::popcount(mask),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 | Isa::Avx512 => unsafe { x86::popcount_avx2(mask) },
        }
    }

    /// One step of a chained MinHash intersection: bin `i` stays valid iff it
    /// was valid, `values[i] == operand[i]`, and `operand[i]` is not the empty
    /// sentinel. Invalid output values are 0.
    pub fn intersect_into(
        &self,
        values: &[u32],
        mask: &[u64],
        operand: &[u32],
        out_values: &mut [u32],
        out_mask: &mut [u64],
    ) -> Result<(), KernelError> {
        check_pair(values.len(), operand.len())?;
        check_pair(values.len(), out_values.len())?;
        check_aligned(values.len())?;
        check_mask(mask, values.len())?;
        check_mask(out_mask, values.len())?;
        match self.isa {
            Isa::Scalar => scalar::intersect(values, mask, operand, out_values, out_mask),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { x86::intersect_avx2(values, mask, operand, out_values, out_mask) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe {
                x86::intersect_avx512(values, mask, operand, out_values, out_mask)
            },
        }
        Ok(())
    }

    /// Union of two intermediate signatures: valid in either, value is the
    /// minimum of the valid contributions.
    pub fn union_into(
        &self,
        a: (&[u32], &[u64]),
        b: (&[u32], &[u64]),
        out_values: &mut [u32],
        out_mask: &mut [u64],
    ) -> Result<(), KernelError> {
        self.check_binary(a, b, out_values, out_mask)?;
        match self.isa {
            Isa::Scalar => scalar::union(a, b, out_values, out_mask),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { x86::union_avx2(a, b, out_values, out_mask) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe { x86::union_avx512(a, b, out_values, out_mask) },
        }
        Ok(())
    }

    /// Intersection of two intermediate signatures: valid in both with equal
    /// values.
    pub fn pair_intersect_into(
        &self,
        a: (&[u32], &[u64]),
        b: (&[u32], &[u64]),
        out_values: &mut [u32],
        out_mask: &mut [u64],
    ) -> Result<(), KernelError> {
        self.check_binary(a, b, out_values, out_mask)?;
        match self.isa {
            Isa::Scalar => scalar::pair_intersect(a, b, out_values, out_mask),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { x86::pair_intersect_avx2(a, b, out_values, out_mask) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe { x86::pair_intersect_avx512(a, b, out_values, out_mask) },
        }
        Ok(())
    }

    fn check_binary(
        &self,
        a: (&[u32], &[u64]),
        b: (&[u32], &[u64]),
        out_values: &[u32],
        out_mask: &[u64],
    ) -> Result<(), KernelError> {
        let bins = a.0.len();
        check_pair(bins, b.0.len())?;
        check_pair(bins, out_values.len())?;
        check_aligned(bins)?;
        check_mask(a.1, bins)?;
        check_mask(b.1, bins)?;
        check_mask(out_mask, bins)
    }

    /// Folds one item into a MinHash bin array:
    /// `bins[i] = min(bins[i], low32(mix(item ^ seeds[i])))`.
    pub fn hash_min_assign(&self, bins: &mut [u32], seeds: &[u64], item: u64) -> Result<(), KernelError> {
        check_pair(bins.len(), seeds.len())?;
        check_aligned(bins.len())?;
        match self.isa {
            Isa::Scalar => scalar::hash_min_assign(bins, seeds, item),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { x86::hash_min_assign_avx2(bins, seeds, item) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe { x86::hash_min_assign_avx512(bins, seeds, item) },
        }
        Ok(())
    }
}

pub fn lanes_equal_mask(a: &[u32], b: &[u32]) -> Result<Vec<u64>, KernelError> {
    KernelDispatch::active().equal_mask(a, b)
}

pub fn lanes_min(a: &[u32], b: &[u32]) -> Result<Vec<u32>, KernelError> {
    KernelDispatch::active().min(a, b)
}

pub fn mask_popcount(mask: &[u64]) -> u64 {
    KernelDispatch::active().popcount(mask)
}

mod scalar {
    use super::*;

    #[inline]
    fn bit(mask: &[u64], i: usize) -> bool {
        mask[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn equal_mask(a: &[u32], b: &[u32], out: &mut [u64]) {
        out.fill(0);
        for i in 0..a.len() {
            if a[i] == b[i] {
                out[i / 64] |= 1 << (i % 64);
            }
        }
    }

    pub fn min(a: &[u32], b: &[u32], out: &mut [u32]) {
        for i in 0..a.len() {
            out[i] = a[i].min(b[i]);
        }
    }

    pub fn min_assign(acc: &mut [u32], b: &[u32]) {
        for i in 0..acc.len() {
            acc[i] = acc[i].min(b[i]);
        }
    }

    pub fn max_assign_u8(acc: &mut [u8], b: &[u8]) {
        for i in 0..acc.len() {
            acc[i] = acc[i].max(b[i]);
        }
    }

    pub fn popcount(mask: &[u64]) -> u64 {
        mask.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn intersect(values: &[u32], mask: &[u64], operand: &[u32], out_values: &mut [u32], out_mask: &mut [u64]) {
        out_mask.fill(0);
        for i in 0..values.len() {
            if bit(mask, i) && values[i] == operand[i] && operand[i] != EMPTY_SENTINEL {
                out_values[i] = values[i];
                out_mask[i / 64] |= 1 << (i % 64);
            } else {
                out_values[i] = 0;
            }
        }
    }

    pub fn union(a: (&[u32], &[u64]), b: (&[u32], &[u64]), out_values: &mut [u32], out_mask: &mut [u64]) {
        out_mask.fill(0);
        for i in 0..a.0.len() {
            let value = match (bit(a.1, i), bit(b.1, i)) {
                (true, true) => Some(a.0[i].min(b.0[i])),
                (true, false) => Some(a.0[i]),
                (false, true) => Some(b.0[i]),
                (false, false) => None,
            };
            match value {
                Some(v) => {
                    out_values[i] = v;
                    out_mask[i / 64] |= 1 << (i % 64);
                }
                None => out_values[i] = 0,
            }
        }
    }

    pub fn pair_intersect(a: (&[u32], &[u64]), b: (&[u32], &[u64]), out_values: &mut [u32], out_mask: &mut [u64]) {
        out_mask.fill(0);
        for i in 0..a.0.len() {
            if bit(a.1, i) && bit(b.1, i) && a.0[i] == b.0[i] {
                out_values[i] = a.0[i];
                out_mask[i / 64] |= 1 << (i % 64);
            } else {
                out_values[i] = 0;
            }
        }
    }

    pub fn hash_min_assign(bins: &mut [u32], seeds: &[u64], item: u64) {
        for (bin, &seed) in bins.iter_mut().zip(seeds) {
            *bin = (*bin).min(bin_value(item, seed));
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    use super::EMPTY_SENTINEL;

    #[inline(always)]
    fn mask_bits(mask: &[u64], start: usize, width: usize) -> u64 {
        (mask[start / 64] >> (start % 64)) & ((1u64 << width) - 1)
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn equal_mask_avx512(a: &[u32], b: &[u32], out: &mut [u64]) {
        out.fill(0);
        let mut i = 0;
        while i < a.len() {
            let va = _mm512_loadu_si512(a.as_ptr().add(i).cast());
            let vb = _mm512_loadu_si512(b.as_ptr().add(i).cast());
            let m = _mm512_cmpeq_epi32_mask(va, vb);
            out[i / 64] |= (m as u64) << (i % 64);
            i += 16;
        }
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn equal_mask_avx2(a: &[u32], b: &[u32], out: &mut [u64]) {
        out.fill(0);
        let mut i = 0;
        while i < a.len() {
            let va = _mm256_loadu_si256(a.as_ptr().add(i).cast());
            let vb = _mm256_loadu_si256(b.as_ptr().add(i).cast());
            let eq = _mm256_cmpeq_epi32(va, vb);
            let bits = _mm256_movemask_ps(_mm256_castsi256_ps(eq)) as u32 as u64;
            out[i / 64] |= bits << (i % 64);
            i += 8;
        }
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn min_avx512(a: &[u32], b: &[u32], out: &mut [u32]) {
        let n = a.len() / 16 * 16;
        let mut i = 0;
        while i < n {
            let va = _mm512_loadu_si512(a.as_ptr().add(i).cast());
            let vb = _mm512_loadu_si512(b.as_ptr().add(i).cast());
            _mm512_storeu_si512(out.as_mut_ptr().add(i).cast(), _mm512_min_epu32(va, vb));
            i += 16;
        }
        for j in n..a.len() {
            out[j] = a[j].min(b[j]);
        }
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn min_avx2(a: &[u32], b: &[u32], out: &mut [u32]) {
        let n = a.len() / 8 * 8;
        let mut i = 0;
        while i < n {
            let va = _mm256_loadu_si256(a.as_ptr().add(i).cast());
            let vb = _mm256_loadu_si256(b.as_ptr().add(i).cast());
            _mm256_storeu_si256(out.as_mut_ptr().add(i).cast(), _mm256_min_epu32(va, vb));
            i += 8;
        }
        for j in n..a.len() {
            out[j] = a[j].min(b[j]);
        }
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn min_assign_avx512(acc: &mut [u32], b: &[u32]) {
        let n = acc.len() / 16 * 16;
        let mut i = 0;
        while i < n {
            let p = acc.as_mut_ptr().add(i);
            let va = _mm512_loadu_si512(p.cast());
            let vb = _mm512_loadu_si512(b.as_ptr().add(i).cast());
            _mm512_storeu_si512(p.cast(), _mm512_min_epu32(va, vb));
            i += 16;
        }
        for j in n..acc.len() {
            acc[j] = acc[j].min(b[j]);
        }
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn min_assign_avx2(acc: &mut [u32], b: &[u32]) {
        let n = acc.len() / 8 * 8;
        let mut i = 0;
        while i < n {
            let p = acc.as_mut_ptr().add(i);
            let va = _mm256_loadu_si256(p.cast());
            let vb = _mm256_loadu_si256(b.as_ptr().add(i).cast());
            _mm256_storeu_si256(p.cast(), _mm256_min_epu32(va, vb));
            i += 8;
        }
        for j in n..acc.len() {
            acc[j] = acc[j].min(b[j]);
        }
    }

    #[target_feature(enable = "avx512f,avx512bw")]
    pub unsafe fn max_assign_u8_avx512(acc: &mut [u8], b: &[u8]) {
        let n = acc.len() / 64 * 64;
        let mut i = 0;
        while i < n {
            let p = acc.as_mut_ptr().add(i);
            let va = _mm512_loadu_si512(p.cast());
            let vb = _mm512_loadu_si512(b.as_ptr().add(i).cast());
            _mm512_storeu_si512(p.cast(), _mm512_max_epu8(va, vb));
            i += 64;
        }
        for j in n..acc.len() {
            acc[j] = acc[j].max(b[j]);
        }
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn max_assign_u8_avx2(acc: &mut [u8], b: &[u8]) {
        let n = acc.len() / 32 * 32;
        let mut i = 0;
        while i < n {
            let p = acc.as_mut_ptr().add(i);
            let va = _mm256_loadu_si256(p.cast());
            let vb = _mm256_loadu_si256(b.as_ptr().add(i).cast());
            _mm256_storeu_si256(p.cast(), _mm256_max_epu8(va, vb));
            i += 32;
        }
        for j in n..acc.len() {
            acc[j] = acc[j].max(b[j]);
        }
    }

    /// Nibble-table popcount over 256-bit chunks.
    #[target_feature(enable = "avx2")]
    pub unsafe fn popcount_avx2(mask: &[u64]) -> u64 {
        let lut = _mm256_setr_epi8(
            0, 1, 1, 2, 1, 2, 2, 3, 1, 2, 2, 3, 2, 3, 3, 4, //
            0, 1, 1, 2, 1, 2, 2, 3, 1, 2, 2, 3, 2, 3, 3, 4,
        );
        let low = _mm256_set1_epi8(0x0f);
        let mut acc = _mm256_setzero_si256();
        let n = mask.len() / 4 * 4;
        let mut i = 0;
        while i < n {
            let v = _mm256_loadu_si256(mask.as_ptr().add(i).cast());
            let lo = _mm256_and_si256(v, low);
            let hi = _mm256_and_si256(_mm256_srli_epi16(v, 4), low);
            let cnt = _mm256_add_epi8(_mm256_shuffle_epi8(lut, lo), _mm256_shuffle_epi8(lut, hi));
            acc = _mm256_add_epi64(acc, _mm256_sad_epu8(cnt, _mm256_setzero_si256()));
            i += 4;
        }
        let mut lanes = [0u64; 4];
        _mm256_storeu_si256(lanes.as_mut_ptr().cast(), acc);
        let tail: u64 = mask[n..].iter().map(|w| w.count_ones() as u64).sum();
        lanes.iter().sum::<u64>() + tail
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn intersect_avx512(
        values: &[u32],
        mask: &[u64],
        operand: &[u32],
        out_values: &mut [u32],
        out_mask: &mut [u64],
    ) {
        out_mask.fill(0);
        let sentinel = _mm512_set1_epi32(EMPTY_SENTINEL as i32);
        let mut i = 0;
        while i < values.len() {
            let valid = mask_bits(mask, i, 16) as u16;
            let v = _mm512_loadu_si512(values.as_ptr().add(i).cast());
            let o = _mm512_loadu_si512(operand.as_ptr().add(i).cast());
            let eq = _mm512_mask_cmpeq_epi32_mask(valid, v, o);
            let keep = eq & _mm512_cmpneq_epi32_mask(o, sentinel);
            _mm512_storeu_si512(out_values.as_mut_ptr().add(i).cast(), _mm512_maskz_mov_epi32(keep, v));
            out_mask[i / 64] |= (keep as u64) << (i % 64);
            i += 16;
        }
    }

    #[inline(always)]
    unsafe fn lane_select_avx2(bits: u64) -> __m256i {
        let sel = _mm256_setr_epi32(1, 2, 4, 8, 16, 32, 64, 128);
        let b = _mm256_set1_epi32(bits as i32);
        _mm256_cmpeq_epi32(_mm256_and_si256(b, sel), sel)
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn intersect_avx2(
        values: &[u32],
        mask: &[u64],
        operand: &[u32],
        out_values: &mut [u32],
        out_mask: &mut [u64],
    ) {
        out_mask.fill(0);
        let sentinel = _mm256_set1_epi32(EMPTY_SENTINEL as i32);
        let mut i = 0;
        while i < values.len() {
            let valid = lane_select_avx2(mask_bits(mask, i, 8));
            let v = _mm256_loadu_si256(values.as_ptr().add(i).cast());
            let o = _mm256_loadu_si256(operand.as_ptr().add(i).cast());
            let eq = _mm256_and_si256(valid, _mm256_cmpeq_epi32(v, o));
            let keep = _mm256_andnot_si256(_mm256_cmpeq_epi32(o, sentinel), eq);
            _mm256_storeu_si256(out_values.as_mut_ptr().add(i).cast(), _mm256_and_si256(keep, v));
            let bits = _mm256_movemask_ps(_mm256_castsi256_ps(keep)) as u32 as u64;
            out_mask[i / 64] |= bits << (i % 64);
            i += 8;
        }
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn union_avx512(
        a: (&[u32], &[u64]),
        b: (&[u32], &[u64]),
        out_values: &mut [u32],
        out_mask: &mut [u64],
    ) {
        out_mask.fill(0);
        let ones = _mm512_set1_epi32(-1);
        let mut i = 0;
        while i < a.0.len() {
            let ma = mask_bits(a.1, i, 16) as u16;
            let mb = mask_bits(b.1, i, 16) as u16;
            let va = _mm512_mask_mov_epi32(ones, ma, _mm512_loadu_si512(a.0.as_ptr().add(i).cast()));
            let vb = _mm512_mask_mov_epi32(ones, mb, _mm512_loadu_si512(b.0.as_ptr().add(i).cast()));
            let m = ma | mb;
            let r = _mm512_maskz_mov_epi32(m, _mm512_min_epu32(va, vb));
            _mm512_storeu_si512(out_values.as_mut_ptr().add(i).cast(), r);
            out_mask[i / 64] |= (m as u64) << (i % 64);
            i += 16;
        }
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn union_avx2(
        a: (&[u32], &[u64]),
        b: (&[u32], &[u64]),
        out_values: &mut [u32],
        out_mask: &mut [u64],
    ) {
        out_mask.fill(0);
        let ones = _mm256_set1_epi32(-1);
        let mut i = 0;
        while i < a.0.len() {
            let bits_a = mask_bits(a.1, i, 8);
            let bits_b = mask_bits(b.1, i, 8);
            let la = lane_select_avx2(bits_a);
            let lb = lane_select_avx2(bits_b);
            let va = _mm256_blendv_epi8(ones, _mm256_loadu_si256(a.0.as_ptr().add(i).cast()), la);
            let vb = _mm256_blendv_epi8(ones, _mm256_loadu_si256(b.0.as_ptr().add(i).cast()), lb);
            let r = _mm256_and_si256(_mm256_or_si256(la, lb), _mm256_min_epu32(va, vb));
            _mm256_storeu_si256(out_values.as_mut_ptr().add(i).cast(), r);
            out_mask[i / 64] |= (bits_a | bits_b) << (i % 64);
            i += 8;
        }
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn pair_intersect_avx512(
        a: (&[u32], &[u64]),
        b: (&[u32], &[u64]),
        out_values: &mut [u32],
        out_mask: &mut [u64],
    ) {
        out_mask.fill(0);
        let mut i = 0;
        while i < a.0.len() {
            let valid = (mask_bits(a.1, i, 16) & mask_bits(b.1, i, 16)) as u16;
            let va = _mm512_loadu_si512(a.0.as_ptr().add(i).cast());
            let vb = _mm512_loadu_si512(b.0.as_ptr().add(i).cast());
            let keep = _mm512_mask_cmpeq_epi32_mask(valid, va, vb);
            _mm512_storeu_si512(out_values.as_mut_ptr().add(i).cast(), _mm512_maskz_mov_epi32(keep, va));
            out_mask[i / 64] |= (keep as u64) << (i % 64);
            i += 16;
        }
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn pair_intersect_avx2(
        a: (&[u32], &[u64]),
        b: (&[u32], &[u64]),
        out_values: &mut [u32],
        out_mask: &mut [u64],
    ) {
        out_mask.fill(0);
        let mut i = 0;
        while i < a.0.len() {
            let valid = lane_select_avx2(mask_bits(a.1, i, 8) & mask_bits(b.1, i, 8));
            let va = _mm256_loadu_si256(a.0.as_ptr().add(i).cast());
            let vb = _mm256_loadu_si256(b.0.as_ptr().add(i).cast());
            let keep = _mm256_and_si256(valid, _mm256_cmpeq_epi32(va, vb));
            _mm256_storeu_si256(out_values.as_mut_ptr().add(i).cast(), _mm256_and_si256(keep, va));
            let bits = _mm256_movemask_ps(_mm256_castsi256_ps(keep)) as u32 as u64;
            out_mask[i / 64] |= bits << (i % 64);
            i += 8;
        }
    }

    const MIX_C1: i64 = 0xff51_afd7_ed55_8ccd_u64 as i64;
    const MIX_C2: i64 = 0xc4ce_b9fe_1a85_ec53_u64 as i64;

    #[target_feature(enable = "avx512f,avx512dq,avx2")]
    pub unsafe fn hash_min_assign_avx512(bins: &mut [u32], seeds: &[u64], item: u64) {
        let it = _mm512_set1_epi64(item as i64);
        let c1 = _mm512_set1_epi64(MIX_C1);
        let c2 = _mm512_set1_epi64(MIX_C2);
        let mut i = 0;
        while i < bins.len() {
            let mut x = _mm512_xor_si512(it, _mm512_loadu_si512(seeds.as_ptr().add(i).cast()));
            x = _mm512_xor_si512(x, _mm512_srli_epi64(x, 33));
            x = _mm512_mullo_epi64(x, c1);
            x = _mm512_xor_si512(x, _mm512_srli_epi64(x, 33));
            x = _mm512_mullo_epi64(x, c2);
            x = _mm512_xor_si512(x, _mm512_srli_epi64(x, 33));
            let low = _mm512_cvtepi64_epi32(x);
            let p = bins.as_mut_ptr().add(i);
            let cur = _mm256_loadu_si256(p.cast());
            _mm256_storeu_si256(p.cast(), _mm256_min_epu32(cur, low));
            i += 8;
        }
    }

    #[inline(always)]
    unsafe fn mullo64_avx2(a: __m256i, b: __m256i) -> __m256i {
        let a_hi = _mm256_srli_epi64(a, 32);
        let b_hi = _mm256_srli_epi64(b, 32);
        let lo = _mm256_mul_epu32(a, b);
        let cross = _mm256_add_epi64(_mm256_mul_epu32(a_hi, b), _mm256_mul_epu32(a, b_hi));
        _mm256_add_epi64(lo, _mm256_slli_epi64(cross, 32))
    }

    #[inline(always)]
    unsafe fn mix_avx2(mut x: __m256i) -> __m256i {
        let c1 = _mm256_set1_epi64x(MIX_C1);
        let c2 = _mm256_set1_epi64x(MIX_C2);
        x = _mm256_xor_si256(x, _mm256_srli_epi64(x, 33));
        x = mullo64_avx2(x, c1);
        x = _mm256_xor_si256(x, _mm256_srli_epi64(x, 33));
        x = mullo64_avx2(x, c2);
        _mm256_xor_si256(x, _mm256_srli_epi64(x, 33))
    }

    #[target_feature(enable = "avx2,sse4.1")]
    pub unsafe fn hash_min_assign_avx2(bins: &mut [u32], seeds: &[u64], item: u64) {
        let it = _mm256_set1_epi64x(item as i64);
        // Low dwords of four u64 lanes into the low 128 bits.
        let pick = _mm256_setr_epi32(0, 2, 4, 6, 0, 2, 4, 6);
        let mut i = 0;
        while i < bins.len() {
            let x = mix_avx2(_mm256_xor_si256(it, _mm256_loadu_si256(seeds.as_ptr().add(i).cast())));
            let low = _mm256_castsi256_si128(_mm256_permutevar8x32_epi32(x, pick));
            let p = bins.as_mut_ptr().add(i);
            let cur = _mm_loadu_si128(p.cast());
            _mm_storeu_si128(p.cast(), _mm_min_epu32(cur, low));
            i += 4;
        }
    }
}

/// Timing comparison of the scalar and lane paths on identical inputs.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkReport {
    pub k: usize,
    pub iterations: usize,
    pub scalar_ns: u128,
    pub vector_ns: u128,
    pub speedup: f64,
    pub lane_path: String,
    pub lane_width: usize,
    pub outputs_identical: bool,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

struct BenchScratch {
    mask: Vec<u64>,
    values: Vec<u32>,
    inter_mask: Vec<u64>,
    mins: Vec<u32>,
    popcount: u64,
}

impl BenchScratch {
    fn new(k: usize) -> Self {
        Self {
            mask: vec![0; mask_words(k)],
            values: vec![0; k],
            inter_mask: vec![0; mask_words(k)],
            mins: vec![0; k],
            popcount: 0,
        }
    }

    fn same_output(&self, other: &Self) -> bool {
        self.mask == other.mask
            && self.values == other.values
            && self.inter_mask == other.inter_mask
            && self.mins == other.mins
            && self.popcount == other.popcount
    }
}

/// One query-time operand step: equality mask, intersection update, union
/// minimum and the final popcount.
fn bench_step(d: &KernelDispatch, a: &[u32], b: &[u32], full: &[u64], s: &mut BenchScratch) -> Result<(), KernelError> {
    d.equal_mask_into(a, b, &mut s.mask)?;
    d.intersect_into(a, full, b, &mut s.values, &mut s.inter_mask)?;
    d.min_into(a, b, &mut s.mins)?;
    s.popcount = d.popcount(&s.inter_mask);
    Ok(())
}

/// Times `iterations` operand steps over `k` bins on each path. The workload
/// has roughly half the bins equal and a sprinkling of empty sentinels.
pub fn benchmark_kernels(k: usize, iterations: usize, seed: u64) -> Result<BenchmarkReport, KernelError> {
    check_aligned(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<u32> = (0..k)
        .map(|_| if rng.gen_ratio(1, 32) { EMPTY_SENTINEL } else { rng.gen() })
        .collect();
    let b: Vec<u32> = a
        .iter()
        .map(|&v| if rng.gen_bool(0.5) { v } else { rng.gen() })
        .collect();
    let mut full = vec![u64::MAX; mask_words(k)];
    if k % 64 != 0 {
        *full.last_mut().unwrap() = (1u64 << (k % 64)) - 1;
    }

    let scalar = KernelDispatch::scalar();
    let lanes = KernelDispatch::detect();

    let mut scalar_out = BenchScratch::new(k);
    let mut lane_out = BenchScratch::new(k);
    // Warm caches for both paths.
    bench_step(&scalar, &a, &b, &full, &mut scalar_out)?;
    bench_step(&lanes, &a, &b, &full, &mut lane_out)?;

    let start = Instant::now();
    for _ in 0..iterations {
        bench_step(&scalar, std::hint::black_box(&a), &b, &full, &mut scalar_out)?;
        std::hint::black_box(&scalar_out.popcount);
    }
    let scalar_ns = start.elapsed().as_nanos();

    let start = Instant::now();
    for _ in 0..iterations {
        bench_step(&lanes, std::hint::black_box(&a), &b, &full, &mut lane_out)?;
        std::hint::black_box(&lane_out.popcount);
    }
    let vector_ns = start.elapsed().as_nanos();

    Ok(BenchmarkReport {
        k,
        iterations,
        scalar_ns,
        vector_ns,
        speedup: scalar_ns as f64 / vector_ns.max(1) as f64,
        lane_path: lanes.name().to_string(),
        lane_width: lanes.lane_width(),
        outputs_identical: scalar_out.same_output(&lane_out),
    })
}
