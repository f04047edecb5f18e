use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::hash::HashConfig;

use super::{build_hypercube, load_records, BuildError, CubeIoError, ExcludeReport, Hypercube, IngestError, RecordBatch};

/// Inputs of one file-to-hypercube build.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub input: PathBuf,
    pub universe: PathBuf,
    pub psid_column: String,
    pub group_by: Vec<String>,
    pub dimension_name: String,
    pub config: HashConfig,
    pub delimiter: u8,
    pub keep_exact_counts: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildSummary {
    pub rows: usize,
    pub rejected_empty_psid: usize,
    pub universe_rejected_empty_psid: usize,
    pub cells: usize,
    pub exclude: ExcludeReport,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Ingest {
        path: PathBuf,
        #[source]
        source: IngestError,
    },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Write(#[from] CubeIoError),
}

fn ingest(path: &Path, result: Result<RecordBatch, IngestError>) -> Result<RecordBatch, PipelineError> {
    result.map_err(|source| PipelineError::Ingest {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a universe file. A single-column file supplies its only column;
/// otherwise the PSID column is looked up by name.
pub fn load_universe(path: &Path, psid_column: &str, delimiter: u8) -> Result<RecordBatch, IngestError> {
    match load_records(path, psid_column, delimiter) {
        Err(IngestError::MissingColumn(_)) => {
            let probe = load_header(path, delimiter)?;
            match probe.as_slice() {
                [only] => load_records(path, only, delimiter),
                _ => Err(IngestError::MissingColumn(psid_column.to_string())),
            }
        }
        other => other,
    }
}

fn load_header(path: &Path, delimiter: u8) -> Result<Vec<String>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_path(path)
        .map_err(|e| IngestError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
    let header = reader.headers().map_err(|e| IngestError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    Ok(header.iter().map(str::to_owned).collect())
}

/// Loads both files and builds the hypercube in memory.
pub fn build_from_files(opts: &BuildOptions) -> Result<(Hypercube, BuildSummary), PipelineError> {
    let batch = ingest(&opts.input, load_records(&opts.input, &opts.psid_column, opts.delimiter))?;
    let universe = ingest(&opts.universe, load_universe(&opts.universe, &opts.psid_column, opts.delimiter))?;
    let (cube, exclude) = build_hypercube(&opts.dimension_name, &batch, &opts.group_by, &universe, opts.config)?;
    let cube = if opts.keep_exact_counts { cube } else { cube.without_exact_counts() };
    let summary = BuildSummary {
        rows: batch.row_count(),
        rejected_empty_psid: batch.rejected_empty_psid(),
        universe_rejected_empty_psid: universe.rejected_empty_psid(),
        cells: cube.cells.len(),
        exclude,
    };
    Ok((cube, summary))
}
