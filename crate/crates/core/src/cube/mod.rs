//! Offline hypercube construction: raw dimension records are grouped into
//! cells, each holding include and exclude (complement) sketches.

mod build;
mod format;
mod pipeline;
mod records;

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::error::{FormatError, SketchError};
use crate::hash::HashConfig;
use crate::sketch::{HllSketch, MinHashSignature};

pub use build::{build_cells, build_exclude, build_hypercube, ExcludeReport, PartialHypercube};
pub use format::{decode_hypercube, encode_hypercube, read_hypercube, write_hypercube, HYPERCUBE_MAGIC, HYPERCUBE_VERSION};
pub use pipeline::{build_from_files, load_universe, BuildOptions, BuildSummary, PipelineError};
pub use records::{load_records, RecordBatch};

/// Key component used for empty attribute values.
pub const EMPTY_VALUE: &str = "(empty)";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing header row")]
    MissingHeader,
    #[error("column {0:?} not in header")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: u64, expected: usize, found: usize },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("group-by column list is empty")]
    EmptyGroupBy,
    #[error("group-by column {0:?} not in batch")]
    UnknownColumn(String),
    #[error("device universe is empty")]
    EmptyUniverse,
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

#[derive(Debug, Error)]
pub enum CubeIoError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
}

/// Attribute values of one cell, aligned with the group-by columns.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey(pub Vec<String>);

impl CellKey {
    pub fn values(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.0.join(","))
    }
}

/// One hypercube row: include and exclude sketches of a cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cuboid {
    pub key: CellKey,
    pub hll: HllSketch,
    pub exhll: HllSketch,
    pub minhash: MinHashSignature,
    pub exminhash: MinHashSignature,
    /// Distinct devices in the cell, when the build kept exact counts.
    pub exact_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypercube {
    pub dimension_name: String,
    pub group_by: Vec<String>,
    pub config: HashConfig,
    /// Sorted by key, keys unique.
    pub cells: Vec<Cuboid>,
    pub universe_hll: HllSketch,
    pub universe_minhash: MinHashSignature,
}

impl Hypercube {
    pub fn cell(&self, key: &CellKey) -> Option<&Cuboid> {
        self.cells
            .binary_search_by(|c| c.key.cmp(key))
            .ok()
            .map(|i| &self.cells[i])
    }

    pub fn column_index(&self, column: &str) -> Option<usize> {
        self.group_by.iter().position(|c| c == column)
    }

    pub fn has_exact_counts(&self) -> bool {
        self.cells.first().is_some_and(|c| c.exact_count.is_some())
    }

    /// Drops the per-cell exact counts so they are not written out.
    pub fn without_exact_counts(mut self) -> Self {
        self.cells.iter_mut().for_each(|c| c.exact_count = None);
        self
    }
}
