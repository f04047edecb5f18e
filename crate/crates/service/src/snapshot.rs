use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use devreach::cube::{read_hypercube, CubeIoError, Hypercube};
use devreach::HashConfig;
use serde::Serialize;
use thiserror::Error;

/// Distinct values listed per column before truncating.
pub const MAX_LISTED_VALUES: usize = 1000;

pub const CUBE_EXTENSION: &str = "hcub";

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot list {path}: {source}")]
    Dir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Cube(#[from] CubeIoError),
    #[error("dimension {name:?} is defined by both {first} and {second}")]
    DuplicateDimension { name: String, first: PathBuf, second: PathBuf },
    #[error("{path} uses hash configuration {found:?}, other cubes use {expected:?}")]
    MixedConfig {
        path: PathBuf,
        expected: HashConfig,
        found: HashConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ColumnInfo {
    pub name: String,
    pub values: Vec<String>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DimensionInfo {
    pub name: String,
    pub group_by: Vec<String>,
    pub columns: Vec<ColumnInfo>,
    pub cell_count: usize,
}

impl DimensionInfo {
    fn describe(cube: &Hypercube) -> Self {
        let columns = cube
            .group_by
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let distinct: BTreeSet<&str> = cube.cells.iter().map(|c| c.key.values()[i].as_str()).collect();
                ColumnInfo {
                    name: name.clone(),
                    truncated: distinct.len() > MAX_LISTED_VALUES,
                    values: distinct.into_iter().take(MAX_LISTED_VALUES).map(str::to_owned).collect(),
                }
            })
            .collect();
        Self {
            name: cube.dimension_name.clone(),
            group_by: cube.group_by.clone(),
            columns,
            cell_count: cube.cells.len(),
        }
    }
}

/// Immutable set of loaded hypercubes. Handlers hold an `Arc` to one
/// snapshot for the whole request.
#[derive(Debug)]
pub struct Snapshot {
    cubes: BTreeMap<String, Hypercube>,
    dimensions: Vec<DimensionInfo>,
    config: Option<HashConfig>,
}

impl Snapshot {
    pub fn empty() -> Self {
        Self {
            cubes: BTreeMap::new(),
            dimensions: Vec::new(),
            config: None,
        }
    }

    /// Cubes paired with the file they came from, for error messages.
    pub fn from_cubes<I>(cubes: I) -> Result<Self, LoadError>
    where
        I: IntoIterator<Item = (PathBuf, Hypercube)>,
    {
        let mut origin: BTreeMap<String, PathBuf> = BTreeMap::new();
        let mut map = BTreeMap::new();
        let mut config: Option<HashConfig> = None;
        for (path, cube) in cubes {
            match config {
                Some(expected) if expected != cube.config => {
                    return Err(LoadError::MixedConfig {
                        path,
                        expected,
                        found: cube.config,
                    });
                }
                _ => config = Some(cube.config),
            }
            if let Some(first) = origin.get(&cube.dimension_name) {
                return Err(LoadError::DuplicateDimension {
                    name: cube.dimension_name.clone(),
                    first: first.clone(),
                    second: path,
                });
            }
            origin.insert(cube.dimension_name.clone(), path);
            map.insert(cube.dimension_name.clone(), cube);
        }
        let dimensions = map.values().map(DimensionInfo::describe).collect();
        Ok(Self {
            cubes: map,
            dimensions,
            config,
        })
    }

    /// Loads every `*.hcub` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, LoadError> {
        let entries = fs::read_dir(dir).map_err(|source| LoadError::Dir {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry
                .map_err(|source| LoadError::Dir {
                    path: dir.to_path_buf(),
                    source,
                })?
                .path();
            if path.is_file() && path.extension().is_some_and(|e| e == CUBE_EXTENSION) {
                paths.push(path);
            }
        }
        paths.sort();
        let mut cubes = Vec::with_capacity(paths.len());
        for path in paths {
            let cube = read_hypercube(&path)?;
            cubes.push((path, cube));
        }
        Self::from_cubes(cubes)
    }

    pub fn cubes(&self) -> &BTreeMap<String, Hypercube> {
        &self.cubes
    }

    /// Sorted by dimension name.
    pub fn dimensions(&self) -> &[DimensionInfo] {
        &self.dimensions
    }

    pub fn config(&self) -> Option<&HashConfig> {
        self.config.as_ref()
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }
}
