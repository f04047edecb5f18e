//! Targeting expressions and their evaluation over hypercube sketches.
//!
//! Placement clauses intersect, each creative's clauses intersect, creatives
//! union, and the placement and creative levels intersect. Reach is the
//! final Jaccard ratio times the HLL estimate of all operands merged.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::Hypercube;
use crate::error::SketchError;
use crate::sketch::{HllSketch, IntermediateSignature, MinHashSignature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClauseMode {
    Include,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetingClause {
    pub dimension: String,
    /// Column -> accepted values. Columns combine conjunctively, values
    /// within a column disjunctively; unlisted columns match anything.
    pub filters: BTreeMap<String, Vec<String>>,
    pub mode: ClauseMode,
}

impl TargetingClause {
    pub fn include(dimension: &str, filters: &[(&str, &[&str])]) -> Self {
        Self::with_mode(dimension, filters, ClauseMode::Include)
    }

    pub fn exclude(dimension: &str, filters: &[(&str, &[&str])]) -> Self {
        Self::with_mode(dimension, filters, ClauseMode::Exclude)
    }

    fn with_mode(dimension: &str, filters: &[(&str, &[&str])], mode: ClauseMode) -> Self {
        Self {
            dimension: dimension.to_string(),
            filters: filters
                .iter()
                .map(|(c, vs)| (c.to_string(), vs.iter().map(|v| v.to_string()).collect()))
                .collect(),
            mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Creative {
    pub creative_targetings: Vec<TargetingClause>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(into = "WireExpression")]
pub struct TargetingExpression {
    pub placement_targetings: Vec<TargetingClause>,
    pub creatives: Vec<Creative>,
}

impl TargetingExpression {
    pub fn placement(clauses: Vec<TargetingClause>) -> Self {
        Self {
            placement_targetings: clauses,
            creatives: Vec::new(),
        }
    }

    pub fn with_creative(mut self, clauses: Vec<TargetingClause>) -> Self {
        self.creatives.push(Creative {
            creative_targetings: clauses,
        });
        self
    }

    pub fn clauses(&self) -> impl Iterator<Item = &TargetingClause> {
        self.placement_targetings
            .iter()
            .chain(self.creatives.iter().flat_map(|c| &c.creative_targetings))
    }

    pub fn clause_count(&self) -> usize {
        self.clauses().count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("expression serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireExpression {
    placement: WirePlacement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    creatives: Option<Vec<WireCreative>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePlacement {
    targetings: Vec<TargetingClause>,
    // Also accepted here for documents that nest creatives in the placement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    creatives: Option<Vec<WireCreative>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireCreative {
    targetings: Vec<TargetingClause>,
}

impl From<TargetingExpression> for WireExpression {
    fn from(e: TargetingExpression) -> Self {
        Self {
            placement: WirePlacement {
                targetings: e.placement_targetings,
                creatives: None,
            },
            creatives: Some(
                e.creatives
                    .into_iter()
                    .map(|c| WireCreative {
                        targetings: c.creative_targetings,
                    })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("unknown dimension {0:?}")]
    UnknownDimension(String),
    #[error("dimension {dimension:?} has no group-by column {column:?}")]
    UnknownColumn { dimension: String, column: String },
    #[error("no cell of {dimension:?} matches {filters}")]
    EmptySelection { dimension: String, filters: String },
    #[error(transparent)]
    Incompatible(#[from] SketchError),
    #[error("jaccard {0} outside [0, 1]")]
    JaccardRange(f64),
    #[error("union cardinality {0} is negative or not finite")]
    CardinalityRange(f64),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> QueryError {
    QueryError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses and validates an expression document.
pub fn parse_expression(document: &str) -> Result<TargetingExpression, QueryError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let wire: WireExpression = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => schema(path, inner.to_string()),
            _ => QueryError::Malformed(inner.to_string()),
        }
    })?;

    let (creatives, creatives_path) = match (wire.creatives, wire.placement.creatives) {
        (Some(_), Some(_)) => return Err(schema("placement.creatives", "creatives given both here and at the top level")),
        (Some(c), None) => (c, "creatives"),
        (None, Some(c)) => (c, "placement.creatives"),
        (None, None) => (Vec::new(), "creatives"),
    };
    if wire.placement.targetings.is_empty() {
        return Err(schema("placement.targetings", "at least one placement targeting is required"));
    }
    check_clauses(&wire.placement.targetings, "placement.targetings")?;
    for (i, c) in creatives.iter().enumerate() {
        let path = format!("{creatives_path}[{i}].targetings");
        if c.targetings.is_empty() {
            return Err(schema(path, "a creative needs at least one targeting"));
        }
        check_clauses(&c.targetings, &path)?;
    }
    Ok(TargetingExpression {
        placement_targetings: wire.placement.targetings,
        creatives: creatives
            .into_iter()
            .map(|c| Creative {
                creative_targetings: c.targetings,
            })
            .collect(),
    })
}

fn check_clauses(clauses: &[TargetingClause], path: &str) -> Result<(), QueryError> {
    for (i, clause) in clauses.iter().enumerate() {
        if clause.filters.is_empty() {
            return Err(schema(format!("{path}[{i}].filters"), "at least one filter is required"));
        }
        if let Some((column, _)) = clause.filters.iter().find(|(_, values)| values.is_empty()) {
            return Err(schema(format!("{path}[{i}].filters.{column}"), "at least one value is required"));
        }
    }
    Ok(())
}

/// Hypercubes addressable by dimension name.
pub trait CubeCatalog {
    fn cube(&self, dimension: &str) -> Option<&Hypercube>;
}

impl CubeCatalog for BTreeMap<String, Hypercube> {
    fn cube(&self, dimension: &str) -> Option<&Hypercube> {
        self.get(dimension)
    }
}

impl CubeCatalog for HashMap<String, Hypercube> {
    fn cube(&self, dimension: &str) -> Option<&Hypercube> {
        self.get(dimension)
    }
}

impl CubeCatalog for [Hypercube] {
    fn cube(&self, dimension: &str) -> Option<&Hypercube> {
        self.iter().find(|c| c.dimension_name == dimension)
    }
}

impl CubeCatalog for Vec<Hypercube> {
    fn cube(&self, dimension: &str) -> Option<&Hypercube> {
        self.as_slice().cube(dimension)
    }
}

/// Sketches one clause contributes to an evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperandSketches {
    pub hll_part: HllSketch,
    /// One merged signature for an include clause; one complement per
    /// selected cell for an exclude clause, each intersected separately.
    pub mh_parts: Vec<MinHashSignature>,
}

/// Indices of the cells matching the clause filters.
pub fn select_cells(cube: &Hypercube, clause: &TargetingClause) -> Result<Vec<usize>, QueryError> {
    let mut filters: Vec<(usize, HashSet<&str>)> = Vec::with_capacity(clause.filters.len());
    for (column, values) in &clause.filters {
        let idx = cube.column_index(column).ok_or_else(|| QueryError::UnknownColumn {
            dimension: cube.dimension_name.clone(),
            column: column.clone(),
        })?;
        filters.push((idx, values.iter().map(String::as_str).collect()));
    }
    let matches = |i: usize| {
        let key = cube.cells[i].key.values();
        filters.iter().all(|(col, values)| values.contains(key[*col].as_str()))
    };

    // Cells are sorted by key, so a filter on the leading column narrows the
    // scan to contiguous ranges.
    let selected: Vec<usize> = match filters.iter().find(|(col, _)| *col == 0) {
        Some((_, leading)) => {
            let mut values: Vec<&str> = leading.iter().copied().collect();
            values.sort_unstable();
            values
                .into_iter()
                .flat_map(|v| {
                    let start = cube.cells.partition_point(|c| c.key.values()[0].as_str() < v);
                    let end = cube.cells.partition_point(|c| c.key.values()[0].as_str() <= v);
                    start..end
                })
                .filter(|&i| matches(i))
                .collect()
        }
        None => (0..cube.cells.len()).filter(|&i| matches(i)).collect(),
    };
    if selected.is_empty() {
        return Err(QueryError::EmptySelection {
            dimension: cube.dimension_name.clone(),
            filters: serde_json::to_string(&clause.filters).expect("string map serializes"),
        });
    }
    Ok(selected)
}

pub fn resolve_operand(cube: &Hypercube, clause: &TargetingClause) -> Result<OperandSketches, QueryError> {
    if cube.dimension_name != clause.dimension {
        return Err(QueryError::UnknownDimension(clause.dimension.clone()));
    }
    let selected = select_cells(cube, clause)?;
    let mut hll = HllSketch::new(cube.config);
    match clause.mode {
        ClauseMode::Include => {
            let mut minhash = MinHashSignature::new(cube.config);
            for &i in &selected {
                hll.merge_assign(&cube.cells[i].hll)?;
                minhash.merge_union_assign(&cube.cells[i].minhash)?;
            }
            Ok(OperandSketches {
                hll_part: hll,
                mh_parts: vec![minhash],
            })
        }
        ClauseMode::Exclude => {
            let mut parts = Vec::with_capacity(selected.len());
            for &i in &selected {
                hll.merge_assign(&cube.cells[i].exhll)?;
                parts.push(cube.cells[i].exminhash.clone());
            }
            Ok(OperandSketches {
                hll_part: hll,
                mh_parts: parts,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReachEstimate {
    pub reach: f64,
    pub jaccard: f64,
    pub union_cardinality: f64,
    /// Number of targeting clauses evaluated.
    pub operand_count: usize,
    pub elapsed_ms: f64,
}

/// `jaccard × union_cardinality`.
pub fn estimate_reach(jaccard: f64, union_cardinality: f64) -> Result<f64, QueryError> {
    if !(0.0..=1.0).contains(&jaccard) {
        return Err(QueryError::JaccardRange(jaccard));
    }
    if !(union_cardinality >= 0.0 && union_cardinality.is_finite()) {
        return Err(QueryError::CardinalityRange(union_cardinality));
    }
    Ok(jaccard * union_cardinality)
}

/// Final intermediate signature and merged HLL of an expression.
#[derive(Debug, Clone)]
pub struct Composition {
    pub signature: IntermediateSignature,
    pub union_hll: HllSketch,
    pub operand_count: usize,
}

pub fn compose_expression<C: CubeCatalog + ?Sized>(cubes: &C, expr: &TargetingExpression) -> Result<Composition, QueryError> {
    if expr.placement_targetings.is_empty() {
        return Err(schema("placement.targetings", "at least one placement targeting is required"));
    }
    let mut union_hll: Option<HllSketch> = None;
    let mut chain = |clauses: &[TargetingClause], path: &str| -> Result<IntermediateSignature, QueryError> {
        if clauses.is_empty() {
            return Err(schema(path, "at least one targeting is required"));
        }
        let mut acc: Option<IntermediateSignature> = None;
        for clause in clauses {
            let cube = cubes
                .cube(&clause.dimension)
                .ok_or_else(|| QueryError::UnknownDimension(clause.dimension.clone()))?;
            let operand = resolve_operand(cube, clause)?;
            match union_hll.as_mut() {
                Some(u) => u.merge_assign(&operand.hll_part)?,
                None => union_hll = Some(operand.hll_part),
            }
            for part in &operand.mh_parts {
                acc = Some(match acc {
                    None => part.to_intermediate(),
                    Some(a) => a.intersect(part)?,
                });
            }
        }
        Ok(acc.expect("every clause yields at least one signature"))
    };

    let placement = chain(&expr.placement_targetings, "placement.targetings")?;
    let mut creative_level: Option<IntermediateSignature> = None;
    for (i, creative) in expr.creatives.iter().enumerate() {
        let sig = chain(&creative.creative_targetings, &format!("creatives[{i}].targetings"))?;
        creative_level = Some(match creative_level {
            None => sig,
            Some(level) => level.union(&sig)?,
        });
    }
    let signature = match creative_level {
        Some(level) => placement.intersect_intermediate(&level)?,
        None => placement,
    };
    Ok(Composition {
        signature,
        union_hll: union_hll.expect("placement has clauses"),
        operand_count: expr.clause_count(),
    })
}

pub fn eval_expression<C: CubeCatalog + ?Sized>(cubes: &C, expr: &TargetingExpression) -> Result<ReachEstimate, QueryError> {
    let start = Instant::now();
    let comp = compose_expression(cubes, expr)?;
    let jaccard = comp.signature.jaccard_ratio().ratio;
    let union_cardinality = comp.union_hll.estimate();
    let reach = estimate_reach(jaccard, union_cardinality)?;
    Ok(ReachEstimate {
        reach,
        jaccard,
        union_cardinality,
        operand_count: comp.operand_count,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{build_hypercube, CellKey, RecordBatch};
    use crate::hash::HashConfig;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn sample_profile_cube() -> Hypercube {
        let rows = [
            s(&["12abc3", "US", "2011", "KRM"]),
            s(&["ef1268", "US", "2011", "KRM"]),
            s(&["980jkkj", "CA", "2018", "CHM"]),
            s(&["kasbudu", "CA", "2018", "CHM"]),
            s(&["kasbudu", "CA", "2019", "CHM"]),
        ];
        let batch = RecordBatch::from_rows(s(&["PSID", "country", "year", "chipset"]), "PSID", rows).unwrap();
        let universe = RecordBatch::from_rows(s(&["PSID"]), "PSID", batch.psids().iter().map(|p| vec![p.clone()])).unwrap();
        let cfg = HashConfig::new(1, 10, 256).unwrap();
        build_hypercube("DeviceProfile", &batch, &s(&["country", "year", "chipset"]), &universe, cfg)
            .unwrap()
            .0
    }

    #[test]
    fn include_merges_matching_cells() {
        let cube = sample_profile_cube();
        let op = resolve_operand(&cube, &TargetingClause::include("DeviceProfile", &[("country", &["CA"])])).unwrap();
        let a = cube.cell(&CellKey(s(&["CA", "2018", "CHM"]))).unwrap();
        let b = cube.cell(&CellKey(s(&["CA", "2019", "CHM"]))).unwrap();
        assert_eq!(op.hll_part, a.hll.merge(&b.hll).unwrap());
        assert_eq!(op.mh_parts, vec![a.minhash.merge_union(&b.minhash).unwrap()]);
    }

    #[test]
    fn single_cell_selection_is_unchanged() {
        let cube = sample_profile_cube();
        let clause = TargetingClause::include("DeviceProfile", &[("year", &["2011"])]);
        let op = resolve_operand(&cube, &clause).unwrap();
        let cell = cube.cell(&CellKey(s(&["US", "2011", "KRM"]))).unwrap();
        assert_eq!(op.hll_part, cell.hll);
        assert_eq!(op.mh_parts, vec![cell.minhash.clone()]);
    }

    #[test]
    fn exclude_keeps_per_cell_complements() {
        let cube = sample_profile_cube();
        let op = resolve_operand(&cube, &TargetingClause::exclude("DeviceProfile", &[("chipset", &["CHM"])])).unwrap();
        assert_eq!(op.mh_parts.len(), 2);
        assert_eq!(op.hll_part, cube.cells[0].exhll.merge(&cube.cells[1].exhll).unwrap());
    }

    #[test]
    fn resolution_errors() {
        let cube = sample_profile_cube();
        let cubes = vec![cube.clone()];
        assert!(matches!(
            resolve_operand(&cube, &TargetingClause::include("DeviceProfile", &[("year", &["1999"])])),
            Err(QueryError::EmptySelection { .. })
        ));
        assert!(matches!(
            resolve_operand(&cube, &TargetingClause::include("DeviceProfile", &[("model", &["x"])])),
            Err(QueryError::UnknownColumn { column, .. }) if column == "model"
        ));
        let expr = TargetingExpression::placement(vec![TargetingClause::include("Nope", &[("a", &["b"])])]);
        assert!(matches!(eval_expression(&cubes, &expr), Err(QueryError::UnknownDimension(d)) if d == "Nope"));
    }

    #[test]
    fn estimate_reach_contract() {
        assert_eq!(estimate_reach(0.5, 1000.0).unwrap(), 500.0);
        assert_eq!(estimate_reach(0.0, 1234.5).unwrap(), 0.0);
        assert_eq!(estimate_reach(1.0, 77.0).unwrap(), 77.0);
        assert!(matches!(estimate_reach(1.5, 1.0), Err(QueryError::JaccardRange(_))));
        assert!(matches!(estimate_reach(-0.1, 1.0), Err(QueryError::JaccardRange(_))));
        assert!(matches!(estimate_reach(f64::NAN, 1.0), Err(QueryError::JaccardRange(_))));
        assert!(matches!(estimate_reach(0.5, -1.0), Err(QueryError::CardinalityRange(_))));
    }

    #[test]
    fn parses_single_clause_document() {
        let doc = r#"{"placement":{"targetings":[{"dimension":"DeviceProfile","filters":{"country":["US"]},"mode":"include"}],"creatives":[]}}"#;
        let expr = parse_expression(doc).unwrap();
        assert_eq!(expr.placement_targetings, vec![TargetingClause::include("DeviceProfile", &[("country", &["US"])])]);
        assert!(expr.creatives.is_empty());
    }

    #[test]
    fn top_level_creatives_round_trip() {
        let expr = TargetingExpression::placement(vec![TargetingClause::include("D", &[("a", &["1", "2"])])])
            .with_creative(vec![TargetingClause::exclude("E", &[("b", &["x"])])]);
        let json = expr.to_json();
        assert!(json.starts_with(r#"{"placement":{"targetings":"#));
        assert!(json.contains(r#""creatives":[{"targetings":"#));
        assert_eq!(parse_expression(&json).unwrap(), expr);
    }

    fn schema_path(doc: &str) -> String {
        match parse_expression(doc) {
            Err(QueryError::Schema { path, .. }) => path,
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_path() {
        assert_eq!(schema_path(r#"{"placement":{}}"#), "placement");
        assert_eq!(
            schema_path(r#"{"placement":{"targetings":[{"dimension":"D","filters":{"a":["1"]},"mode":"Include"}]}}"#),
            "placement.targetings[0].mode"
        );
        assert_eq!(schema_path(r#"{"placement":{"targetings":[]}}"#), "placement.targetings");
        assert_eq!(
            schema_path(r#"{"placement":{"targetings":[{"dimension":"D","filters":{},"mode":"include"}]}}"#),
            "placement.targetings[0].filters"
        );
        assert_eq!(
            schema_path(r#"{"placement":{"targetings":[{"dimension":"D","filters":{"a":[]},"mode":"include"}]}}"#),
            "placement.targetings[0].filters.a"
        );
        assert_eq!(
            schema_path(
                r#"{"placement":{"targetings":[{"dimension":"D","filters":{"a":["1"]},"mode":"include"}]},"creatives":[{"targetings":[]}]}"#
            ),
            "creatives[0].targetings"
        );
        assert_eq!(schema_path(r#"{"placement":{"targetings":[]},"extra":1}"#), "extra");
        assert!(matches!(parse_expression("{not json"), Err(QueryError::Malformed(_))));
    }

    #[test]
    fn whole_universe_include_has_unit_jaccard() {
        let cubes = vec![sample_profile_cube()];
        let expr = TargetingExpression::placement(vec![TargetingClause::include(
            "DeviceProfile",
            &[("country", &["US", "CA"])],
        )]);
        let est = eval_expression(&cubes, &expr).unwrap();
        assert_eq!(est.jaccard, 1.0);
        assert!((est.reach - 4.0).abs() < 0.05);
        assert_eq!(est.operand_count, 1);
    }

    #[test]
    fn disjoint_includes_have_zero_reach() {
        let cubes = vec![sample_profile_cube()];
        let expr = TargetingExpression::placement(vec![
            TargetingClause::include("DeviceProfile", &[("country", &["US"])]),
            TargetingClause::include("DeviceProfile", &[("country", &["CA"])]),
        ]);
        let est = eval_expression(&cubes, &expr).unwrap();
        assert_eq!(est.jaccard, 0.0);
        assert_eq!(est.reach, 0.0);
        assert_eq!(est.operand_count, 2);
    }

    #[test]
    fn result_json_field_names() {
        let est = ReachEstimate {
            reach: 1.0,
            jaccard: 0.5,
            union_cardinality: 2.0,
            operand_count: 3,
            elapsed_ms: 0.25,
        };
        let v: serde_json::Value = serde_json::to_value(&est).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["elapsedMs", "jaccard", "operandCount", "reach", "unionCardinality"]);
    }
}
