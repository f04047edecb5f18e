use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use reach_service::{router, serve, AppState, Snapshot};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "reachd", version, about = "Serve device-reach estimates from hypercube files")]
struct Args {
    /// Directory of .hcub files, loaded once at startup.
    #[arg(long)]
    cubes: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// Origin allowed to call the API from a browser; repeatable, `*` for any.
    #[arg(long = "cors-origin")]
    cors_origin: Vec<String>,
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down");
}

async fn run(args: Args) -> Result<(), String> {
    let snapshot = Snapshot::load_dir(&args.cubes).map_err(|e| e.to_string())?;
    for dim in snapshot.dimensions() {
        tracing::info!(dimension = %dim.name, cells = dim.cell_count, "loaded");
    }
    if snapshot.is_empty() {
        tracing::warn!(dir = %args.cubes.display(), "no .hcub files found");
    }
    let app = router(AppState::new(snapshot), &args.cors_origin).map_err(|e| e.to_string())?;
    let addr = SocketAddr::new(args.bind, args.port);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| format!("cannot bind {addr}: {e}"))?;
    tracing::info!(%addr, "listening");
    serve(listener, app, shutdown_signal()).await.map_err(|e| e.to_string())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Args::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
