use thiserror::Error;

use crate::hash::HashConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("HLL precision {0} outside 4..=18")]
    Precision(u8),
    #[error("MinHash bin count {0} must be a positive multiple of 16")]
    Bins(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SketchError {
    #[error("incompatible sketches: {left:?} vs {right:?}")]
    Incompatible { left: HashConfig, right: HashConfig },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub(crate) fn ensure_compatible(left: &HashConfig, right: &HashConfig) -> Result<(), SketchError> {
    if left == right {
        Ok(())
    } else {
        Err(SketchError::Incompatible {
            left: *left,
            right: *right,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("lane length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("lane length {0} is not a multiple of 16")]
    Alignment(usize),
    #[error("mask has {words} words, expected {expected}")]
    MaskLength { words: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatErrorKind {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("unknown sketch kind {0}")]
    UnknownKind(u8),
    #[error("unexpected sketch kind {found}, expected {expected}")]
    WrongKind { expected: u8, found: u8 },
    #[error("truncated input")]
    Truncated,
    #[error("trailing bytes")]
    TrailingBytes,
    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("sketch config differs from file header")]
    ConfigMismatch,
    #[error("register value {value} exceeds maximum {max}")]
    RegisterRange { value: u8, max: u8 },
    #[error("non-canonical intermediate signature")]
    NonCanonical,
    #[error("invalid UTF-8 string")]
    Utf8,
    #[error("{0}")]
    Invalid(String),
}

/// Decoding failure at a byte offset.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("format error at byte {offset}: {kind}")]
pub struct FormatError {
    pub offset: usize,
    pub kind: FormatErrorKind,
}

impl FormatError {
    pub fn new(offset: usize, kind: FormatErrorKind) -> Self {
        Self { offset, kind }
    }
}
