use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use devreach::query::{eval_expression, parse_expression, QueryError, ReachEstimate};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::snapshot::Snapshot;

#[derive(Clone)]
pub struct AppState {
    snapshot: Arc<Snapshot>,
    started: Instant,
}

impl AppState {
    pub fn new(snapshot: Snapshot) -> Self {
        Self {
            snapshot: Arc::new(snapshot),
            started: Instant::now(),
        }
    }

    pub fn snapshot(&self) -> &Arc<Snapshot> {
        &self.snapshot
    }
}

/// JSON error body `{"error": code, ...context}` with its status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, context: Value) -> Self {
        let mut body = json!({ "error": code });
        if let (Some(obj), Value::Object(extra)) = (body.as_object_mut(), context) {
            obj.extend(extra);
        }
        Self { status, body }
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }

    pub fn body(&self) -> &Value {
        &self.body
    }
}

impl From<QueryError> for ApiError {
    fn from(err: QueryError) -> Self {
        let message = err.to_string();
        match err {
            QueryError::Malformed(_) => Self::new(StatusCode::BAD_REQUEST, "malformed_json", json!({ "message": message })),
            QueryError::Schema { path, .. } => Self::new(
                StatusCode::BAD_REQUEST,
                "schema_violation",
                json!({ "path": path, "message": message }),
            ),
            QueryError::UnknownDimension(dimension) => {
                Self::new(StatusCode::NOT_FOUND, "unknown_dimension", json!({ "dimension": dimension }))
            }
            QueryError::UnknownColumn { dimension, column } => Self::new(
                StatusCode::BAD_REQUEST,
                "unknown_column",
                json!({ "dimension": dimension, "column": column }),
            ),
            QueryError::EmptySelection { dimension, filters } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "empty_selection",
                json!({ "dimension": dimension, "filters": serde_json::from_str::<Value>(&filters).unwrap_or(Value::String(filters)) }),
            ),
            QueryError::Incompatible(_) | QueryError::JaccardRange(_) | QueryError::CardinalityRange(_) => {
                Self::internal(message)
            }
        }
    }
}

impl ApiError {
    fn internal(message: String) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", json!({ "message": message }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Parses and evaluates one request body against `snapshot`.
pub fn estimate(snapshot: &Snapshot, body: &[u8]) -> Result<ReachEstimate, ApiError> {
    let start = Instant::now();
    let text = std::str::from_utf8(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", json!({ "message": e.to_string() })))?;
    let expr = parse_expression(text)?;
    let mut result = eval_expression(snapshot.cubes(), &expr)?;
    result.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(result)
}

async fn post_estimate(State(state): State<AppState>, body: Bytes) -> Result<Json<ReachEstimate>, ApiError> {
    let snapshot = Arc::clone(&state.snapshot);
    let outcome = tokio::task::spawn_blocking(move || estimate(&snapshot, &body))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    match &outcome {
        Ok(r) => tracing::debug!(reach = r.reach, operands = r.operand_count, elapsed_ms = r.elapsed_ms, "estimate"),
        Err(e) => tracing::debug!(status = %e.status, body = %e.body, "estimate rejected"),
    }
    outcome.map(Json)
}

async fn get_dimensions(State(state): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(state.snapshot.dimensions()).expect("listing serializes"))
}

async fn get_health(State(state): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "cubes_loaded": state.snapshot.len(),
        "uptime_s": state.started.elapsed().as_secs_f64(),
    }))
}

#[derive(Debug, thiserror::Error)]
#[error("invalid CORS origin {0:?}")]
pub struct BadOrigin(pub String);

/// Routes over `state`; `cors_origins` may contain `*` to allow any origin.
pub fn router(state: AppState, cors_origins: &[String]) -> Result<Router, BadOrigin> {
    let mut app = Router::new()
        .route("/estimate", post(post_estimate))
        .route("/dimensions", get(get_dimensions))
        .route("/health", get(get_health))
        .with_state(state);
    if !cors_origins.is_empty() {
        let allow = if cors_origins.iter().any(|o| o == "*") {
            AllowOrigin::any()
        } else {
            let origins = cors_origins
                .iter()
                .map(|o| HeaderValue::from_str(o).map_err(|_| BadOrigin(o.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            AllowOrigin::list(origins)
        };
        app = app.layer(
            CorsLayer::new()
                .allow_origin(allow)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([axum::http::header::CONTENT_TYPE]),
        );
    }
    Ok(app)
}
