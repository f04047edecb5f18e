//! Exact reach from raw records, and the accuracy suite comparing it with
//! the sketch estimate.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cube::{build_hypercube, BuildError, CellKey, Hypercube, RecordBatch, EMPTY_VALUE};
use crate::hash::{psid_hash, HashConfig};
use crate::query::{eval_expression, ClauseMode, QueryError, TargetingClause, TargetingExpression};
use crate::synthetic::SyntheticDataset;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("{devices} devices of dimension {dimension:?} are not in the universe")]
    OutsideUniverse { dimension: String, devices: usize },
    #[error("relative error is undefined for a true value of 0")]
    ZeroTruth,
}

/// Exact device sets of one dimension's cells.
#[derive(Debug, Clone)]
pub struct MaterializedDimension {
    pub name: String,
    pub group_by: Vec<String>,
    pub cells: BTreeMap<CellKey, HashSet<u64>>,
    pub universe: HashSet<u64>,
}

impl MaterializedDimension {
    pub fn from_records(
        name: &str,
        batch: &RecordBatch,
        group_by: &[String],
        universe: &RecordBatch,
    ) -> Result<Self, OracleError> {
        if group_by.is_empty() {
            return Err(BuildError::EmptyGroupBy.into());
        }
        let columns = group_by
            .iter()
            .map(|c| batch.column(c).ok_or_else(|| BuildError::UnknownColumn(c.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut cells: BTreeMap<CellKey, HashSet<u64>> = BTreeMap::new();
        for (row, psid) in batch.psids().iter().enumerate() {
            let key = columns
                .iter()
                .map(|col| if col[row].is_empty() { EMPTY_VALUE.to_string() } else { col[row].clone() })
                .collect();
            cells.entry(CellKey(key)).or_default().insert(psid_hash(psid.as_bytes()));
        }
        let universe: HashSet<u64> = universe.psids().iter().map(|p| psid_hash(p.as_bytes())).collect();
        let outside: HashSet<u64> = cells.values().flatten().filter(|d| !universe.contains(d)).copied().collect();
        if !outside.is_empty() {
            return Err(OracleError::OutsideUniverse {
                dimension: name.to_string(),
                devices: outside.len(),
            });
        }
        Ok(Self {
            name: name.to_string(),
            group_by: group_by.to_vec(),
            cells,
            universe,
        })
    }

    /// Cells whose key passes every filter of `clause`.
    pub fn matching_cells<'a>(&'a self, clause: &TargetingClause) -> Result<Vec<&'a HashSet<u64>>, QueryError> {
        let mut filters = Vec::new();
        for (column, values) in &clause.filters {
            let idx = self
                .group_by
                .iter()
                .position(|c| c == column)
                .ok_or_else(|| QueryError::UnknownColumn {
                    dimension: self.name.clone(),
                    column: column.clone(),
                })?;
            filters.push((idx, values));
        }
        let selected: Vec<&HashSet<u64>> = self
            .cells
            .iter()
            .filter(|(key, _)| filters.iter().all(|(idx, values)| values.contains(&key.values()[*idx])))
            .map(|(_, set)| set)
            .collect();
        if selected.is_empty() {
            return Err(QueryError::EmptySelection {
                dimension: self.name.clone(),
                filters: serde_json::to_string(&clause.filters).expect("string map serializes"),
            });
        }
        Ok(selected)
    }
}

fn dimension<'a>(dims: &'a [MaterializedDimension], name: &str) -> Result<&'a MaterializedDimension, QueryError> {
    dims.iter()
        .find(|d| d.name == name)
        .ok_or_else(|| QueryError::UnknownDimension(name.to_string()))
}

/// Devices selected by one clause: the union of matching cells, or its
/// complement within the universe for an exclude clause.
pub fn clause_devices(dims: &[MaterializedDimension], clause: &TargetingClause) -> Result<HashSet<u64>, QueryError> {
    let dim = dimension(dims, &clause.dimension)?;
    let mut union = HashSet::new();
    for cell in dim.matching_cells(clause)? {
        union.extend(cell.iter().copied());
    }
    Ok(match clause.mode {
        ClauseMode::Include => union,
        ClauseMode::Exclude => dim.universe.difference(&union).copied().collect(),
    })
}

fn intersect_all(mut sets: Vec<HashSet<u64>>) -> HashSet<u64> {
    sets.sort_by_key(|s| s.len());
    let mut iter = sets.into_iter();
    let mut acc = iter.next().unwrap_or_default();
    for s in iter {
        acc.retain(|d| s.contains(d));
    }
    acc
}

fn chain_devices(dims: &[MaterializedDimension], clauses: &[TargetingClause]) -> Result<HashSet<u64>, QueryError> {
    let sets = clauses
        .iter()
        .map(|c| clause_devices(dims, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(intersect_all(sets))
}

/// Exact reach: placement clauses intersected, creatives unioned, then the
/// two levels intersected.
pub fn oracle_reach(dims: &[MaterializedDimension], expr: &TargetingExpression) -> Result<u64, QueryError> {
    let placement = chain_devices(dims, &expr.placement_targetings)?;
    if expr.creatives.is_empty() {
        return Ok(placement.len() as u64);
    }
    let mut creative_level = HashSet::new();
    for creative in &expr.creatives {
        creative_level.extend(chain_devices(dims, &creative.creative_targetings)?);
    }
    Ok(placement.intersection(&creative_level).count() as u64)
}

/// `|true − observed| / true × 100`.
pub fn relative_error(true_value: u64, observed: f64) -> Result<f64, OracleError> {
    if true_value == 0 {
        return Err(OracleError::ZeroTruth);
    }
    Ok((true_value as f64 - observed).abs() / true_value as f64 * 100.0)
}

/// Placement clause count and per-creative clause counts.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioShape {
    pub placement: usize,
    pub creatives: &'static [usize],
}

impl ScenarioShape {
    pub fn label(&self) -> String {
        let creative: usize = self.creatives.iter().sum();
        if creative == 0 {
            format!("{}", self.placement)
        } else {
            format!("{}+{}", self.placement, creative)
        }
    }
}

/// 5, 5+5, 10+10 and 10+30 clauses; the last spread over five creatives.
pub const SCENARIO_SHAPES: [ScenarioShape; 4] = [
    ScenarioShape { placement: 5, creatives: &[] },
    ScenarioShape { placement: 5, creatives: &[5] },
    ScenarioShape { placement: 10, creatives: &[10] },
    ScenarioShape { placement: 10, creatives: &[6, 6, 6, 6, 6] },
];

struct Bitset(Vec<u64>);

impl Bitset {
    fn new(bits: usize) -> Self {
        Self(vec![0; bits.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn or_assign(&mut self, other: &Bitset) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a |= b);
    }

    fn count(&self) -> u64 {
        self.0.iter().map(|w| w.count_ones() as u64).sum()
    }
}

/// Per dimension and group-by column: value -> devices having it.
struct ValueIndex {
    columns: Vec<Vec<BTreeMap<String, Bitset>>>,
    universe: f64,
}

impl ValueIndex {
    fn new(dims: &[MaterializedDimension]) -> Self {
        let mut devices: Vec<u64> = dims.iter().flat_map(|d| d.universe.iter().copied()).collect();
        devices.sort_unstable();
        devices.dedup();
        let slot = |d: &u64| devices.binary_search(d).expect("cells lie in the universe");
        let columns = dims
            .iter()
            .map(|dim| {
                (0..dim.group_by.len())
                    .map(|col| {
                        let mut by_value: BTreeMap<String, Bitset> = BTreeMap::new();
                        for (key, set) in &dim.cells {
                            let bits = by_value
                                .entry(key.values()[col].clone())
                                .or_insert_with(|| Bitset::new(devices.len()));
                            set.iter().for_each(|d| bits.set(slot(d)));
                        }
                        by_value
                    })
                    .collect()
            })
            .collect();
        Self {
            columns,
            universe: devices.len() as f64,
        }
    }

    fn coverage<'a>(&self, dim: usize, col: usize, values: impl IntoIterator<Item = &'a String>) -> f64 {
        let map = &self.columns[dim][col];
        let mut acc = Bitset::new(self.universe as usize);
        for v in values {
            acc.or_assign(&map[v]);
        }
        acc.count() as f64 / self.universe
    }
}

/// Include clauses select values covering 85–97% of the universe where the
/// dimension allows; exclude clauses name one or two small values.
fn random_clause(dims: &[MaterializedDimension], index: &ValueIndex, exclude: bool, rng: &mut ChaCha8Rng) -> TargetingClause {
    let d = rng.gen_range(0..dims.len());
    let col = rng.gen_range(0..dims[d].group_by.len());
    let mut values: Vec<&String> = index.columns[d][col].keys().collect();
    let chosen: Vec<String> = if exclude {
        let mut small: Vec<(&String, f64)> = values.iter().map(|v| (*v, index.coverage(d, col, [*v]))).collect();
        small.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
        let candidates: Vec<&String> = small.iter().filter(|(_, c)| *c <= 0.12).map(|(v, _)| *v).collect();
        if candidates.is_empty() {
            vec![small[0].0.clone()]
        } else {
            let n = rng.gen_range(1..=2).min(candidates.len());
            let mut picked: Vec<String> = candidates.choose_multiple(rng, n).map(|v| (*v).clone()).collect();
            if index.coverage(d, col, &picked) > 0.2 {
                picked.truncate(1);
            }
            picked
        }
    } else {
        let target = rng.gen_range(0.85..0.97);
        values.shuffle(rng);
        let mut picked: Vec<String> = Vec::new();
        for v in values {
            picked.push(v.clone());
            if index.coverage(d, col, &picked) >= target {
                break;
            }
        }
        picked.sort();
        picked
    };
    TargetingClause {
        dimension: dims[d].name.clone(),
        filters: BTreeMap::from([(dims[d].group_by[col].clone(), chosen)]),
        mode: if exclude { ClauseMode::Exclude } else { ClauseMode::Include },
    }
}

/// Deterministic scenarios cycling through [`SCENARIO_SHAPES`]. One clause
/// in five, placed at random across the expression, is an exclude.
pub fn generate_scenarios(dims: &[MaterializedDimension], count: usize, seed: u64) -> Vec<(ScenarioShape, TargetingExpression)> {
    let index = ValueIndex::new(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let shape = SCENARIO_SHAPES[i % SCENARIO_SHAPES.len()];
            let total = shape.placement + shape.creatives.iter().sum::<usize>();
            let mut modes: Vec<bool> = (0..total).map(|j| j < total / 5).collect();
            modes.shuffle(&mut rng);
            let mut modes = modes.into_iter();
            let mut take = |n: usize, rng: &mut ChaCha8Rng| -> Vec<TargetingClause> {
                (0..n).map(|_| random_clause(dims, &index, modes.next().expect("sized to total"), rng)).collect()
            };
            let mut expr = TargetingExpression::placement(take(shape.placement, &mut rng));
            for &n in shape.creatives {
                expr = expr.with_creative(take(n, &mut rng));
            }
            (shape, expr)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioOutcome {
    pub scenario: usize,
    pub shape: String,
    pub clauses: usize,
    pub true_value: u64,
    pub predicted_value: f64,
    pub union_estimate: f64,
    /// Absent when the true value is 0.
    pub error_rate_percent: Option<f64>,
    /// Absolute error allowed when the true value is small.
    pub absolute_bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracySummary {
    pub scenarios: usize,
    pub pass_count: usize,
    pub max_error: f64,
    pub p90_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub outcomes: Vec<ScenarioOutcome>,
}

/// Exact reach at or above which the relative-error rule applies.
pub const RELATIVE_RULE_MIN_REACH: u64 = 1000;
pub const MAX_RELATIVE_ERROR_PERCENT: f64 = 5.0;

impl AccuracyReport {
    /// One comma-separated row per scenario under a header.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("scenario,shape,clauses,true_value,predicted_value,error_rate_percent,passed\n");
        for o in &self.outcomes {
            let err = o.error_rate_percent.map_or_else(|| "n/a".to_string(), |e| format!("{e:.3}"));
            out.push_str(&format!(
                "{},{},{},{},{:.1},{},{}\n",
                o.scenario, o.shape, o.clauses, o.true_value, o.predicted_value, err, o.passed
            ));
        }
        out
    }

    pub fn summary(&self) -> AccuracySummary {
        let mut errors: Vec<f64> = self.outcomes.iter().filter_map(|o| o.error_rate_percent).collect();
        errors.sort_by(f64::total_cmp);
        let p90 = if errors.is_empty() {
            0.0
        } else {
            errors[(errors.len() * 9).div_ceil(10).max(1) - 1]
        };
        AccuracySummary {
            scenarios: self.outcomes.len(),
            pass_count: self.outcomes.iter().filter(|o| o.passed).count(),
            max_error: errors.last().copied().unwrap_or(0.0),
            p90_error: p90,
        }
    }
}

/// Hypercubes and exact sets for every dimension of `data`.
pub fn prepare(data: &SyntheticDataset, config: HashConfig) -> Result<(Vec<Hypercube>, Vec<MaterializedDimension>), OracleError> {
    let mut cubes = Vec::new();
    let mut dims = Vec::new();
    for d in &data.dimensions {
        cubes.push(build_hypercube(&d.name, &d.batch, &d.group_by, &data.universe, config)?.0);
        dims.push(MaterializedDimension::from_records(&d.name, &d.batch, &d.group_by, &data.universe)?);
    }
    Ok((cubes, dims))
}

pub fn run_accuracy_suite(
    data: &SyntheticDataset,
    scenario_count: usize,
    seed: u64,
    config: HashConfig,
) -> Result<AccuracyReport, OracleError> {
    let (cubes, dims) = prepare(data, config)?;
    let k = config.num_bins() as f64;
    let mut outcomes = Vec::with_capacity(scenario_count);
    for (i, (shape, expr)) in generate_scenarios(&dims, scenario_count, seed).into_iter().enumerate() {
        let estimate = eval_expression(&cubes, &expr)?;
        let truth = oracle_reach(&dims, &expr)?;
        let error = relative_error(truth, estimate.reach).ok();
        let bound = 3.0 * k.sqrt() / k * estimate.union_cardinality;
        let passed = match error {
            Some(e) if truth >= RELATIVE_RULE_MIN_REACH => e <= MAX_RELATIVE_ERROR_PERCENT,
            _ => (estimate.reach - truth as f64).abs() <= bound,
        };
        outcomes.push(ScenarioOutcome {
            scenario: i,
            shape: shape.label(),
            clauses: expr.clause_count(),
            true_value: truth,
            predicted_value: estimate.reach,
            union_estimate: estimate.union_cardinality,
            error_rate_percent: error,
            absolute_bound: bound,
            passed,
        });
    }
    Ok(AccuracyReport { outcomes })
}
