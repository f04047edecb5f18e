//! Builds a hypercube file from a dimension record file and a device universe.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use devreach::cube::{build_from_files, write_hypercube, BuildOptions};
use devreach::hash::{DEFAULT_BINS, DEFAULT_PRECISION};
use devreach::HashConfig;

#[derive(Debug, Parser)]
#[command(name = "cubebuild", version, about = "Build an include/exclude sketch hypercube")]
struct Args {
    /// Delimited dimension records with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Header name of the device identifier column.
    #[arg(long = "psid-col")]
    psid_col: String,
    /// Comma-separated group-by columns.
    #[arg(long = "group-by", value_delimiter = ',', required = true)]
    group_by: Vec<String>,
    /// Device universe file; a single-column file needs no matching header.
    #[arg(long)]
    universe: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PRECISION)]
    precision: u8,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Field delimiter: a single byte, or "tab".
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    delimiter: u8,
    /// Store per-cell exact distinct counts in the file.
    #[arg(long)]
    keep_exact_counts: bool,
    /// Dimension name stored in the file; defaults to the input file stem.
    #[arg(long)]
    name: Option<String>,
}

fn parse_delimiter(s: &str) -> Result<u8, String> {
    match s {
        "tab" | "\\t" => Ok(b'\t'),
        _ if s.len() == 1 => Ok(s.as_bytes()[0]),
        _ => Err(format!("delimiter must be one byte, got {s:?}")),
    }
}

fn run(args: Args) -> Result<(), String> {
    let config = HashConfig::new(args.seed, args.precision, args.bins).map_err(|e| e.to_string())?;
    let group_by: Vec<String> = args.group_by.iter().map(|c| c.trim().to_string()).collect();
    if group_by.iter().any(String::is_empty) {
        return Err("--group-by contains an empty column name".into());
    }
    let dimension_name = match args.name {
        Some(n) => n,
        None => args
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or("cannot derive a dimension name from --input; pass --name")?,
    };
    let opts = BuildOptions {
        input: args.input,
        universe: args.universe,
        psid_column: args.psid_col,
        group_by,
        dimension_name,
        config,
        delimiter: args.delimiter,
        keep_exact_counts: args.keep_exact_counts,
    };
    let (cube, summary) = build_from_files(&opts).map_err(|e| e.to_string())?;
    write_hypercube(&cube, &args.out).map_err(|e| e.to_string())?;

    eprintln!("rows: {} ({} rejected for empty PSID)", summary.rows, summary.rejected_empty_psid);
    eprintln!(
        "universe: {} devices ({} rows rejected for empty PSID)",
        summary.exclude.universe_size, summary.universe_rejected_empty_psid
    );
    if summary.exclude.devices_outside_universe > 0 {
        eprintln!(
            "warning: {} devices in {} cells are not in the universe",
            summary.exclude.devices_outside_universe, summary.exclude.cells_with_outside_devices
        );
    }
    eprintln!("cells: {}", summary.cells);
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cubebuild: {e}");
            ExitCode::FAILURE
        }
    }
}
