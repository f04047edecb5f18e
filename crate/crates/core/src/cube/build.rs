use std::collections::{HashMap, HashSet};

use crate::hash::{psid_hash, HashConfig};
use crate::kernels::EMPTY_SENTINEL;
use crate::sketch::{BinSeeds, HllSketch, MinHashSignature};

use super::{BuildError, CellKey, Cuboid, Hypercube, RecordBatch, EMPTY_VALUE};

/// Hypercube with include sketches only; complements still to be built.
#[derive(Debug, Clone)]
pub struct PartialHypercube {
    dimension_name: String,
    group_by: Vec<String>,
    config: HashConfig,
    keys: Vec<CellKey>,
    hll: Vec<HllSketch>,
    minhash: Vec<MinHashSignature>,
    exact_counts: Vec<u64>,
    // device hash -> sorted indices of the cells it belongs to
    membership: HashMap<u64, Vec<u32>>,
}

impl PartialHypercube {
    pub fn dimension_name(&self) -> &str {
        &self.dimension_name
    }

    pub fn config(&self) -> &HashConfig {
        &self.config
    }

    pub fn keys(&self) -> &[CellKey] {
        &self.keys
    }

    pub fn include_hll(&self, cell: usize) -> &HllSketch {
        &self.hll[cell]
    }

    pub fn include_minhash(&self, cell: usize) -> &MinHashSignature {
        &self.minhash[cell]
    }

    pub fn exact_count(&self, cell: usize) -> u64 {
        self.exact_counts[cell]
    }

    /// Distinct devices across all cells.
    pub fn device_count(&self) -> usize {
        self.membership.len()
    }
}

/// Groups `batch` by `group_by` and sketches the distinct PSIDs of each cell.
pub fn build_cells(
    dimension_name: &str,
    batch: &RecordBatch,
    group_by: &[String],
    config: HashConfig,
) -> Result<PartialHypercube, BuildError> {
    if group_by.is_empty() {
        return Err(BuildError::EmptyGroupBy);
    }
    let columns = group_by
        .iter()
        .map(|name| batch.column(name).ok_or_else(|| BuildError::UnknownColumn(name.clone())))
        .collect::<Result<Vec<_>, _>>()?;

    let mut index: HashMap<Vec<String>, u32> = HashMap::new();
    let mut keys: Vec<Vec<String>> = Vec::new();
    let mut membership: HashMap<u64, Vec<u32>> = HashMap::new();
    for (row, psid) in batch.psids().iter().enumerate() {
        let key: Vec<String> = columns
            .iter()
            .map(|col| {
                let v = &col[row];
                if v.is_empty() { EMPTY_VALUE.to_string() } else { v.clone() }
            })
            .collect();
        let cell = match index.get(&key) {
            Some(&c) => c,
            None => {
                let c = keys.len() as u32;
                index.insert(key.clone(), c);
                keys.push(key);
                c
            }
        };
        let cells = membership.entry(psid_hash(psid.as_bytes())).or_default();
        if !cells.contains(&cell) {
            cells.push(cell);
        }
    }

    // Renumber cells in key order so the output is canonical.
    let mut order: Vec<u32> = (0..keys.len() as u32).collect();
    order.sort_by(|&a, &b| keys[a as usize].cmp(&keys[b as usize]));
    let mut rank = vec![0u32; keys.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old as usize] = new as u32;
    }
    let mut slots: Vec<Option<Vec<String>>> = keys.into_iter().map(Some).collect();
    let keys: Vec<CellKey> = order
        .iter()
        .map(|&old| CellKey(slots[old as usize].take().expect("each key taken once")))
        .collect();
    for cells in membership.values_mut() {
        cells.iter_mut().for_each(|c| *c = rank[*c as usize]);
        cells.sort_unstable();
    }

    let seeds = BinSeeds::new(config);
    let mut hll = vec![HllSketch::new(config); keys.len()];
    let mut minhash = vec![MinHashSignature::new(config); keys.len()];
    let mut exact_counts = vec![0u64; keys.len()];
    let mut scratch = MinHashSignature::new(config);
    for (&device, cells) in &membership {
        if let [only] = cells.as_slice() {
            minhash[*only as usize].insert_seeded(&seeds, device)?;
        } else {
            scratch.clone_from(&MinHashSignature::new(config));
            scratch.insert_seeded(&seeds, device)?;
            for &c in cells {
                minhash[c as usize].merge_union_assign(&scratch)?;
            }
        }
        for &c in cells {
            hll[c as usize].insert(device);
            exact_counts[c as usize] += 1;
        }
    }

    Ok(PartialHypercube {
        dimension_name: dimension_name.to_string(),
        group_by: group_by.to_vec(),
        config,
        keys,
        hll,
        minhash,
        exact_counts,
        membership,
    })
}

/// What the complement pass saw.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExcludeReport {
    pub universe_size: usize,
    /// Distinct cell devices missing from the universe.
    pub devices_outside_universe: usize,
    pub cells_with_outside_devices: usize,
    /// Distinct cell-membership sets among universe devices.
    pub membership_classes: usize,
    /// Bins whose complement needed a full scan of the membership classes.
    pub fallback_bins: u64,
}

/// Entries kept per bin when computing leave-one-out extremes.
const TOP_PER_BIN: usize = 8;

/// Builds each cell's complement sketches against `universe` in one pass.
///
/// Universe devices are grouped by the exact set of cells they belong to.
/// A cell's exclude sketch folds every group that does not contain the cell.
pub fn build_exclude(partial: PartialHypercube, universe: &RecordBatch) -> Result<(Hypercube, ExcludeReport), BuildError> {
    build_exclude_with(partial, universe, TOP_PER_BIN)
}

fn build_exclude_with(
    partial: PartialHypercube,
    universe: &RecordBatch,
    top: usize,
) -> Result<(Hypercube, ExcludeReport), BuildError> {
    let config = partial.config;
    let devices: HashSet<u64> = universe.psids().iter().map(|p| psid_hash(p.as_bytes())).collect();
    if devices.is_empty() {
        return Err(BuildError::EmptyUniverse);
    }

    let no_cells: Vec<u32> = Vec::new();
    let seeds = BinSeeds::new(config);
    let mut class_index: HashMap<&[u32], usize> = HashMap::new();
    let mut class_members: Vec<&[u32]> = Vec::new();
    let mut class_hll: Vec<HllSketch> = Vec::new();
    let mut class_minhash: Vec<MinHashSignature> = Vec::new();
    for &device in &devices {
        let cells = partial.membership.get(&device).unwrap_or(&no_cells).as_slice();
        let class = *class_index.entry(cells).or_insert_with(|| {
            class_members.push(cells);
            class_hll.push(HllSketch::new(config));
            class_minhash.push(MinHashSignature::new(config));
            class_members.len() - 1
        });
        class_hll[class].insert(device);
        class_minhash[class].insert_seeded(&seeds, device)?;
    }

    let mut report = ExcludeReport {
        universe_size: devices.len(),
        membership_classes: class_members.len(),
        ..Default::default()
    };
    let mut outside_cells = vec![false; partial.keys.len()];
    for (device, cells) in &partial.membership {
        if !devices.contains(device) {
            report.devices_outside_universe += 1;
            cells.iter().for_each(|&c| outside_cells[c as usize] = true);
        }
    }
    report.cells_with_outside_devices = outside_cells.iter().filter(|&&b| b).count();

    let mut universe_hll = HllSketch::new(config);
    let mut universe_minhash = MinHashSignature::new(config);
    for (h, m) in class_hll.iter().zip(&class_minhash) {
        universe_hll.merge_assign(h)?;
        universe_minhash.merge_union_assign(m)?;
    }

    let cells = partial.keys.len();
    let reg_views: Vec<&[u8]> = class_hll.iter().map(|h| h.registers()).collect();
    let bin_views: Vec<&[u32]> = class_minhash.iter().map(|m| m.bins()).collect();
    let exhll = leave_one_out(&reg_views, &class_members, cells, top, &mut report.fallback_bins);
    let exminhash = leave_one_out(&bin_views, &class_members, cells, top, &mut report.fallback_bins);

    let mut out_cells = Vec::with_capacity(cells);
    let parts = partial
        .keys
        .into_iter()
        .zip(partial.hll)
        .zip(partial.minhash)
        .zip(partial.exact_counts)
        .zip(exhll.into_iter().zip(exminhash));
    for ((((key, hll), minhash), count), (ex_regs, ex_bins)) in parts {
        out_cells.push(Cuboid {
            key,
            hll,
            exhll: HllSketch::from_registers(config, ex_regs).expect("folded from valid registers"),
            minhash,
            exminhash: MinHashSignature::from_bins(config, ex_bins).expect("bin count fixed by config"),
            exact_count: Some(count),
        });
    }

    Ok((
        Hypercube {
            dimension_name: partial.dimension_name,
            group_by: partial.group_by,
            config,
            cells: out_cells,
            universe_hll,
            universe_minhash,
        },
        report,
    ))
}

/// `build_cells` followed by `build_exclude`.
pub fn build_hypercube(
    dimension_name: &str,
    batch: &RecordBatch,
    group_by: &[String],
    universe: &RecordBatch,
    config: HashConfig,
) -> Result<(Hypercube, ExcludeReport), BuildError> {
    build_exclude(build_cells(dimension_name, batch, group_by, config)?, universe)
}

/// MinHash bins fold by minimum, HLL registers by maximum.
trait Fold: Copy + Eq {
    const IDENTITY: Self;
    fn beats(self, other: Self) -> bool;
}

impl Fold for u32 {
    const IDENTITY: Self = EMPTY_SENTINEL;
    fn beats(self, other: Self) -> bool {
        self < other
    }
}

impl Fold for u8 {
    const IDENTITY: Self = 0;
    fn beats(self, other: Self) -> bool {
        self > other
    }
}

/// For every cell, the per-bin fold over the classes that do not contain it.
///
/// Each bin keeps its `top` best (value, class) entries; a cell takes the
/// first entry whose class excludes it. Only when a full list is entirely
/// made of classes containing the cell does the bin fall back to a scan.
fn leave_one_out<V: Fold>(
    classes: &[&[V]],
    members: &[&[u32]],
    cells: usize,
    top: usize,
    fallbacks: &mut u64,
) -> Vec<Vec<V>> {
    let width = classes.first().map_or(0, |c| c.len());
    let mut top_val = vec![V::IDENTITY; width * top];
    let mut top_cls = vec![0u32; width * top];
    let mut top_len = vec![0usize; width];
    for (class, values) in classes.iter().enumerate() {
        for (bin, &v) in values.iter().enumerate() {
            if v == V::IDENTITY {
                continue;
            }
            let base = bin * top;
            let len = top_len[bin];
            if len == top && !v.beats(top_val[base + top - 1]) {
                continue;
            }
            let mut pos = len.min(top - 1);
            while pos > 0 && v.beats(top_val[base + pos - 1]) {
                top_val[base + pos] = top_val[base + pos - 1];
                top_cls[base + pos] = top_cls[base + pos - 1];
                pos -= 1;
            }
            top_val[base + pos] = v;
            top_cls[base + pos] = class as u32;
            if len < top {
                top_len[bin] += 1;
            }
        }
    }

    (0..cells as u32)
        .map(|cell| {
            let excludes = |class: usize| members[class].binary_search(&cell).is_err();
            (0..width)
                .map(|bin| {
                    let base = bin * top;
                    let len = top_len[bin];
                    if let Some(t) = (0..len).find(|&t| excludes(top_cls[base + t] as usize)) {
                        return top_val[base + t];
                    }
                    if len < top {
                        return V::IDENTITY;
                    }
                    *fallbacks += 1;
                    (0..classes.len())
                        .filter(|&c| excludes(c))
                        .map(|c| classes[c][bin])
                        .fold(V::IDENTITY, |acc, v| if v.beats(acc) { v } else { acc })
                })
                .collect()
        })
        .collect()
}
