//! Prints the accuracy table for a synthetic universe.
//!
//! `cargo run --release --example accuracy_report -- [devices] [scenarios] [seed]`

use devreach::oracle::run_accuracy_suite;
use devreach::synthetic::synthetic_dataset;
use devreach::HashConfig;

fn main() {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let devices = args.first().copied().unwrap_or(100_000) as usize;
    let scenarios = args.get(1).copied().unwrap_or(50) as usize;
    let seed = args.get(2).copied().unwrap_or(2024);
    let data = synthetic_dataset(devices, seed);
    let report = run_accuracy_suite(&data, scenarios, seed, HashConfig::default()).expect("suite runs");
    print!("{}", report.to_delimited());
    println!("{}", serde_json::to_string(&report.summary()).unwrap());
}
