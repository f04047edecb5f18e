//! Reach estimation over HTTP.
//!
//! `POST /estimate` evaluates a targeting expression, `GET /dimensions` lists
//! the loaded hypercubes and their values, `GET /health` reports liveness.

pub mod api;
pub mod snapshot;

pub use api::{estimate, router, ApiError, AppState, BadOrigin};
pub use snapshot::{ColumnInfo, DimensionInfo, LoadError, Snapshot, MAX_LISTED_VALUES};

/// Serves `app` until the listener fails or `shutdown` resolves.
pub async fn serve<F>(listener: tokio::net::TcpListener, app: axum::Router, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
