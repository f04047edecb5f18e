//! Device hashing and the shared sketch configuration.
//!
//! Every sketch in a hypercube is derived from the same [`HashConfig`]. A PSID
//! is reduced to a 64-bit item with FNV-1a; each use (HLL, MinHash bin `i`)
//! then mixes the item with its own seed through the 64-bit avalanche
//! finalizer, so sketches built by independent processes agree bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

pub const MIN_PRECISION: u8 = 4;
pub const MAX_PRECISION: u8 = 18;
/// MinHash bin counts must be a multiple of this so lane kernels never need a
/// remainder loop.
pub const BIN_ALIGNMENT: usize = 16;

pub const DEFAULT_PRECISION: u8 = 14;
pub const DEFAULT_BINS: usize = 4096;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the raw PSID bytes.
pub fn psid_hash(psid: &[u8]) -> u64 {
    psid.iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// 64-bit avalanche finalizer.
#[inline(always)]
pub fn mix(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    x
}

/// Seed, HLL precision and MinHash width. Two sketches are compatible iff
/// their configs are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HashConfig {
    global_seed: u64,
    precision: u8,
    num_bins: usize,
}

impl HashConfig {
    pub fn new(global_seed: u64, precision: u8, num_bins: usize) -> Result<Self, ConfigError> {
        if !(MIN_PRECISION..=MAX_PRECISION).contains(&precision) {
            return Err(ConfigError::Precision(precision));
        }
        if num_bins < BIN_ALIGNMENT || num_bins % BIN_ALIGNMENT != 0 || num_bins > u32::MAX as usize
        {
            return Err(ConfigError::Bins(num_bins));
        }
        Ok(Self {
            global_seed,
            precision,
            num_bins,
        })
    }

    /// p=14, k=4096.
    pub fn with_seed(global_seed: u64) -> Self {
        Self {
            global_seed,
            precision: DEFAULT_PRECISION,
            num_bins: DEFAULT_BINS,
        }
    }

    pub fn global_seed(&self) -> u64 {
        self.global_seed
    }

    pub fn precision(&self) -> u8 {
        self.precision
    }

    pub fn num_registers(&self) -> usize {
        1 << self.precision
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Largest legal HLL register value.
    pub fn max_rank(&self) -> u8 {
        64 - self.precision + 1
    }

    /// Seed for MinHash bin `i`: `mix(global_seed + i)`.
    #[inline]
    pub fn bin_seed(&self, bin: usize) -> u64 {
        mix(self.global_seed.wrapping_add(bin as u64))
    }

    /// All bin seeds, for bulk insertion.
    pub fn bin_seeds(&self) -> Vec<u64> {
        (0..self.num_bins).map(|i| self.bin_seed(i)).collect()
    }

    /// Seed of the HLL hash domain: index `-1` in the bin-seed sequence.
    #[inline]
    pub fn hll_seed(&self) -> u64 {
        mix(self.global_seed.wrapping_sub(1))
    }

    #[inline]
    pub fn hll_hash(&self, item: u64) -> u64 {
        mix(item ^ self.hll_seed())
    }
}

impl Default for HashConfig {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

/// Value of MinHash bin `i` for `item`, given that bin's seed.
#[inline(always)]
pub fn bin_value(item: u64, bin_seed: u64) -> u32 {
    mix(item ^ bin_seed) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a_known_vectors() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(psid_hash(b""), 0xcbf29ce484222325);
        assert_eq!(psid_hash(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(psid_hash(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn mix_is_a_bijection_on_samples() {
        assert_eq!(mix(0), 0);
        let outs: std::collections::HashSet<u64> = (1..10_000u64).map(mix).collect();
        assert_eq!(outs.len(), 9_999);
    }

    #[test]
    fn config_bounds() {
        assert!(HashConfig::new(0, 3, 4096).is_err());
        assert!(HashConfig::new(0, 19, 4096).is_err());
        assert!(HashConfig::new(0, 4, 16).is_ok());
        assert!(HashConfig::new(0, 18, 16).is_ok());
        assert!(HashConfig::new(0, 14, 10).is_err());
        assert!(HashConfig::new(0, 14, 0).is_err());
        assert!(HashConfig::new(0, 14, 24).is_err());
        assert_eq!(HashConfig::default().num_registers(), 16384);
        assert_eq!(HashConfig::default().max_rank(), 51);
    }

    #[test]
    fn hll_seed_differs_from_bin_seeds() {
        let cfg = HashConfig::new(u64::MAX, 4, 64).unwrap();
        let seeds = cfg.bin_seeds();
        assert!(!seeds.contains(&cfg.hll_seed()));
    }
}
