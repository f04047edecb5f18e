//! HyperLogLog and MinHash sketches with the multilevel signature algebra.

mod codec;
mod hll;
mod intermediate;
mod minhash;

pub use codec::{deserialize_sketch, Sketch, SketchKind, SKETCH_HEADER_LEN, SKETCH_MAGIC};
pub use hll::HllSketch;
pub use intermediate::{IntermediateSignature, JaccardRatio};
pub use minhash::{jaccard, BinSeeds, MinHashSignature};

pub use crate::kernels::EMPTY_SENTINEL;
