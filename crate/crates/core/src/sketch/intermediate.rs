use crate::error::{ensure_compatible, FormatErrorKind, SketchError};
use crate::hash::HashConfig;
use crate::kernels::{mask_words, KernelDispatch, EMPTY_SENTINEL};

use super::minhash::MinHashSignature;

/// Signature values plus a validity mask carrying the state of a multi-way
/// intersection. Invalid bins always hold 0, so two intermediates are equal
/// iff their encodings are byte-equal.
#[derive(Debug, Clone)]
pub struct IntermediateSignature {
    config: HashConfig,
    values: Vec<u32>,
    mask: Vec<u64>,
    // Every signature folded in so far was the empty set. Not part of the
    // encoding or of equality.
    empty_inputs: bool,
}

impl PartialEq for IntermediateSignature {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.values == other.values && self.mask == other.mask
    }
}

impl Eq for IntermediateSignature {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JaccardRatio {
    pub ratio: f64,
    /// Set when every contributing signature was empty; `ratio` is then 0.
    pub empty_inputs: bool,
}

impl IntermediateSignature {
    /// Nothing valid; the identity of [`union`](Self::union).
    pub fn all_invalid(config: HashConfig) -> Self {
        Self {
            config,
            values: vec![0; config.num_bins()],
            mask: vec![0; mask_words(config.num_bins())],
            empty_inputs: true,
        }
    }

    pub fn from_minhash(sig: &MinHashSignature) -> Self {
        let k = sig.bins().len();
        let mut values = vec![0u32; k];
        let mut mask = vec![0u64; mask_words(k)];
        for (i, &b) in sig.bins().iter().enumerate() {
            if b != EMPTY_SENTINEL {
                values[i] = b;
                mask[i / 64] |= 1 << (i % 64);
            }
        }
        Self {
            config: *sig.config(),
            values,
            mask,
            empty_inputs: sig.is_empty(),
        }
    }

    /// Rebuilds from decoded parts, rejecting non-canonical input.
    pub fn from_parts(config: HashConfig, values: Vec<u32>, mask: Vec<u64>) -> Result<Self, FormatErrorKind> {
        let k = config.num_bins();
        if values.len() != k || mask.len() != mask_words(k) {
            return Err(FormatErrorKind::Invalid("intermediate signature length".into()));
        }
        if k % 64 != 0 && mask[k / 64] >> (k % 64) != 0 {
            return Err(FormatErrorKind::NonCanonical);
        }
        let canonical = values.iter().enumerate().all(|(i, &v)| {
            let valid = mask[i / 64] >> (i % 64) & 1 == 1;
            if valid {
                v != EMPTY_SENTINEL
            } else {
                v == 0
            }
        });
        if !canonical {
            return Err(FormatErrorKind::NonCanonical);
        }
        Ok(Self {
            config,
            values,
            mask,
            empty_inputs: false,
        })
    }

    pub fn config(&self) -> &HashConfig {
        &self.config
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[u64] {
        &self.mask
    }

    pub fn is_valid(&self, bin: usize) -> bool {
        self.mask[bin / 64] >> (bin % 64) & 1 == 1
    }

    pub fn valid_count(&self) -> u64 {
        KernelDispatch::active().popcount(&self.mask)
    }

    /// Folds another first-level signature into the intersection.
    pub fn intersect(&self, operand: &MinHashSignature) -> Result<Self, SketchError> {
        ensure_compatible(&self.config, operand.config())?;
        let mut out = Self::all_invalid(self.config);
        KernelDispatch::active()
            .intersect_into(&self.values, &self.mask, operand.bins(), &mut out.values, &mut out.mask)
            .expect("bin count fixed by config");
        out.empty_inputs = self.empty_inputs && operand.is_empty();
        Ok(out)
    }

    /// Valid in either; the value is the minimum of the valid contributions.
    pub fn union(&self, other: &Self) -> Result<Self, SketchError> {
        ensure_compatible(&self.config, &other.config)?;
        let mut out = Self::all_invalid(self.config);
        KernelDispatch::active()
            .union_into(
                (&self.values, &self.mask),
                (&other.values, &other.mask),
                &mut out.values,
                &mut out.mask,
            )
            .expect("bin count fixed by config");
        out.empty_inputs = self.empty_inputs && other.empty_inputs;
        Ok(out)
    }

    /// Intersection of two intermediates: valid in both with equal values.
    pub fn intersect_intermediate(&self, other: &Self) -> Result<Self, SketchError> {
        ensure_compatible(&self.config, &other.config)?;
        let mut out = Self::all_invalid(self.config);
        KernelDispatch::active()
            .pair_intersect_into(
                (&self.values, &self.mask),
                (&other.values, &other.mask),
                &mut out.values,
                &mut out.mask,
            )
            .expect("bin count fixed by config");
        out.empty_inputs = self.empty_inputs && other.empty_inputs;
        Ok(out)
    }

    /// Fraction of valid bins.
    pub fn jaccard_ratio(&self) -> JaccardRatio {
        JaccardRatio {
            ratio: self.valid_count() as f64 / self.values.len() as f64,
            empty_inputs: self.empty_inputs,
        }
    }
}
