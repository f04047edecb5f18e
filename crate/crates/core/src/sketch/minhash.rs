use crate::error::{ensure_compatible, FormatErrorKind, SketchError};
use crate::hash::{bin_value, HashConfig};
use crate::kernels::{KernelDispatch, EMPTY_SENTINEL};

use super::intermediate::{IntermediateSignature, JaccardRatio};

/// Precomputed per-bin seeds for bulk insertion.
#[derive(Debug, Clone)]
pub struct BinSeeds {
    config: HashConfig,
    seeds: Vec<u64>,
}

impl BinSeeds {
    pub fn new(config: HashConfig) -> Self {
        Self {
            config,
            seeds: config.bin_seeds(),
        }
    }

    pub fn config(&self) -> &HashConfig {
        &self.config
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.seeds
    }
}

/// k per-bin minimum hash values of a device set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    config: HashConfig,
    bins: Vec<u32>,
}

impl MinHashSignature {
    /// The empty-set signature: every bin holds [`EMPTY_SENTINEL`].
    pub fn new(config: HashConfig) -> Self {
        Self {
            config,
            bins: vec![EMPTY_SENTINEL; config.num_bins()],
        }
    }

    pub fn from_bins(config: HashConfig, bins: Vec<u32>) -> Result<Self, FormatErrorKind> {
        if bins.len() != config.num_bins() {
            return Err(FormatErrorKind::Invalid(format!(
                "expected {} bins, got {}",
                config.num_bins(),
                bins.len()
            )));
        }
        Ok(Self { config, bins })
    }

    pub fn config(&self) -> &HashConfig {
        &self.config
    }

    pub fn bins(&self) -> &[u32] {
        &self.bins
    }

    pub fn is_empty(&self) -> bool {
        self.bins.iter().all(|&b| b == EMPTY_SENTINEL)
    }

    /// Derives the bin seeds on the fly; use [`insert_seeded`](Self::insert_seeded)
    /// for bulk loads.
    pub fn insert(&mut self, item: u64) {
        for (i, bin) in self.bins.iter_mut().enumerate() {
            *bin = (*bin).min(bin_value(item, self.config.bin_seed(i)));
        }
    }

    pub fn insert_seeded(&mut self, seeds: &BinSeeds, item: u64) -> Result<(), SketchError> {
        ensure_compatible(&self.config, &seeds.config)?;
        KernelDispatch::active()
            .hash_min_assign(&mut self.bins, &seeds.seeds, item)
            .expect("bin count fixed by config");
        Ok(())
    }

    /// Per-bin minimum: the signature of the union.
    pub fn merge_union(&self, other: &MinHashSignature) -> Result<MinHashSignature, SketchError> {
        let mut out = self.clone();
        out.merge_union_assign(other)?;
        Ok(out)
    }

    pub fn merge_union_assign(&mut self, other: &MinHashSignature) -> Result<(), SketchError> {
        ensure_compatible(&self.config, &other.config)?;
        KernelDispatch::active()
            .min_assign(&mut self.bins, &other.bins)
            .expect("bin count fixed by config");
        Ok(())
    }

    pub fn to_intermediate(&self) -> IntermediateSignature {
        IntermediateSignature::from_minhash(self)
    }
}

/// Two-set Jaccard estimate: fraction of bins on which both signatures agree
/// on a non-empty value.
pub fn jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<JaccardRatio, SketchError> {
    Ok(a.to_intermediate().intersect(b)?.jaccard_ratio())
}
