//! Device-reach forecasting over HyperLogLog and MinHash hypercubes.

pub mod cube;
pub mod error;
pub mod hash;
pub mod kernels;
pub mod oracle;
pub mod query;
pub mod sketch;
pub mod synthetic;
mod wire;

pub use error::{ConfigError, FormatError, FormatErrorKind, KernelError, SketchError};
pub use hash::{psid_hash, HashConfig};
