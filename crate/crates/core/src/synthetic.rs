//! Seeded synthetic device populations for accuracy and latency testing.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cube::RecordBatch;

pub const PSID_COLUMN: &str = "PSID";

/// Raw records of one targeting dimension.
#[derive(Debug, Clone)]
pub struct DimensionData {
    pub name: String,
    pub group_by: Vec<String>,
    pub batch: RecordBatch,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub universe: RecordBatch,
    pub dimensions: Vec<DimensionData>,
}

pub fn device_psid(i: usize) -> String {
    format!("tv-{i:07}")
}

struct Column {
    name: &'static str,
    values: Vec<String>,
    weights: Vec<f64>,
}

impl Column {
    fn new(name: &'static str, values: &[&str], weights: &[f64]) -> Self {
        assert_eq!(values.len(), weights.len());
        Self {
            name,
            values: values.iter().map(|v| v.to_string()).collect(),
            weights: weights.to_vec(),
        }
    }

    fn sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.weights).expect("positive weights")
    }
}

fn dimension(name: &str, columns: &[Column], rows: Vec<Vec<String>>) -> DimensionData {
    let mut names = vec![PSID_COLUMN.to_string()];
    names.extend(columns.iter().map(|c| c.name.to_string()));
    DimensionData {
        name: name.to_string(),
        group_by: columns.iter().map(|c| c.name.to_string()).collect(),
        batch: RecordBatch::from_rows(names, PSID_COLUMN, rows).expect("rows match header"),
    }
}

/// Four dimensions over `devices` TVs with group-by arities 1 to 3:
/// DeviceProfile(year, chipset, screen), Program(genre),
/// AppUsage(category, frequency) and Demographic(age_band, language).
pub fn synthetic_dataset(devices: usize, seed: u64) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psids: Vec<String> = (0..devices).map(device_psid).collect();

    let year = Column::new(
        "year",
        &["2015", "2016", "2017", "2018", "2019", "2020", "2021", "2022"],
        &[3.0, 5.0, 8.0, 12.0, 16.0, 20.0, 20.0, 16.0],
    );
    let chipset = Column::new("chipset", &["CHM", "KRM", "MTK", "RTK"], &[35.0, 30.0, 20.0, 15.0]);
    let screen = Column::new("screen", &["32in", "55in", "65in"], &[25.0, 50.0, 25.0]);
    let profile_rows = psids
        .iter()
        .map(|p| {
            let cols = [&year, &chipset, &screen];
            let mut row = vec![p.clone()];
            row.extend(cols.iter().map(|c| c.values[c.sampler().sample(&mut rng)].clone()));
            row
        })
        .collect();

    let genre = Column::new(
        "genre",
        &[
            "news", "sports", "drama", "comedy", "kids", "movies", "documentary", "reality", "music", "food",
            "travel", "anime",
        ],
        &[14.0, 13.0, 12.0, 11.0, 9.0, 10.0, 6.0, 7.0, 5.0, 5.0, 4.0, 4.0],
    );
    let mut program_rows = Vec::new();
    for p in &psids {
        if rng.gen_bool(0.03) {
            continue;
        }
        let watched = rng.gen_range(1..=4);
        let mut picks: Vec<usize> = Vec::new();
        let sampler = genre.sampler();
        while picks.len() < watched {
            let g = sampler.sample(&mut rng);
            if !picks.contains(&g) {
                picks.push(g);
            }
        }
        // Some devices log the same genre twice; duplicates must not inflate counts.
        if rng.gen_bool(0.1) {
            picks.push(picks[0]);
        }
        program_rows.extend(picks.into_iter().map(|g| vec![p.clone(), genre.values[g].clone()]));
    }

    let category = Column::new(
        "category",
        &["streaming", "games", "music", "news", "shopping", "fitness", "education", "social"],
        &[30.0, 15.0, 12.0, 10.0, 9.0, 8.0, 8.0, 8.0],
    );
    let frequency = Column::new("frequency", &["daily", "weekly", "monthly"], &[50.0, 35.0, 15.0]);
    let mut app_rows = Vec::new();
    for p in &psids {
        if rng.gen_bool(0.08) {
            continue;
        }
        for _ in 0..rng.gen_range(1..=3) {
            app_rows.push(vec![
                p.clone(),
                category.values[category.sampler().sample(&mut rng)].clone(),
                frequency.values[frequency.sampler().sample(&mut rng)].clone(),
            ]);
        }
    }

    let age = Column::new(
        "age_band",
        &["18-24", "25-34", "35-44", "45-54", "55-64", "65+"],
        &[12.0, 22.0, 22.0, 18.0, 14.0, 12.0],
    );
    let language = Column::new("language", &["en", "es", "ko", "fr"], &[60.0, 25.0, 8.0, 7.0]);
    let mut demo_rows = Vec::new();
    for p in &psids {
        if rng.gen_bool(0.05) {
            continue;
        }
        // A few records have no language on file.
        let lang = if rng.gen_bool(0.01) {
            String::new()
        } else {
            language.values[language.sampler().sample(&mut rng)].clone()
        };
        demo_rows.push(vec![p.clone(), age.values[age.sampler().sample(&mut rng)].clone(), lang]);
    }

    let mut universe_order = psids.clone();
    universe_order.shuffle(&mut rng);
    let universe = RecordBatch::from_rows(
        vec![PSID_COLUMN.to_string()],
        PSID_COLUMN,
        universe_order.into_iter().map(|p| vec![p]),
    )
    .expect("single column");

    SyntheticDataset {
        universe,
        dimensions: vec![
            dimension("DeviceProfile", &[year, chipset, screen], profile_rows),
            dimension("Program", &[genre], program_rows),
            dimension("AppUsage", &[category, frequency], app_rows),
            dimension("Demographic", &[age, language], demo_rows),
        ],
    }
}

/// Many small cells: `regions × segments` group-by keys over `devices` TVs,
/// each device in one cell.
pub fn wide_dataset(devices: usize, regions: usize, segments: usize, seed: u64) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = regions * segments;
    let rows = (0..devices).map(|i| {
        // Cover every cell before sampling the rest at random.
        let cell = if i < cells { i } else { rng.gen_range(0..cells) };
        vec![device_psid(i), format!("r{:03}", cell / segments), format!("s{:04}", cell % segments)]
    });
    let batch = RecordBatch::from_rows(
        vec![PSID_COLUMN.to_string(), "region".into(), "segment".into()],
        PSID_COLUMN,
        rows.collect::<Vec<_>>(),
    )
    .expect("rows match header");
    let universe = RecordBatch::from_rows(vec![PSID_COLUMN.to_string()], PSID_COLUMN, (0..devices).map(|i| vec![device_psid(i)]))
        .expect("single column");
    SyntheticDataset {
        universe,
        dimensions: vec![DimensionData {
            name: "Geo".to_string(),
            group_by: vec!["region".into(), "segment".into()],
            batch,
        }],
    }
}
