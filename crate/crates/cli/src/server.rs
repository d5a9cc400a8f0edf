//! Read-only HTTP service over one loaded bundle.
//!
//! `GET /api/bundle` returns the bundle document. `/api/predict` takes
//! `{task, p, n}` as a JSON body (POST) or query string (GET) and returns
//! `{value, n_eff, f}`. Errors are `{code, message}` with a 4xx status.

use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use mixlaw_core::analysis::{predict_point, FormSelection};
use mixlaw_core::dataio::LawBundle;
use mixlaw_core::ModelSize;

use crate::CliError;

struct AppState {
    bundle: LawBundle,
    document: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub task: String,
    pub p: f64,
    pub n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub value: f64,
    pub n_eff: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into() } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Builds the service. Requests outside `/api` are served from `static_dir`
/// when given.
pub fn router(bundle: LawBundle, static_dir: Option<&Path>) -> Result<Router, CliError> {
    let document = serde_json::to_string(&bundle).map_err(|e| CliError::Data(e.to_string()))?;
    let state = Arc::new(AppState { bundle, document });
    let api = Router::new()
        .route("/api/bundle", get(get_bundle))
        .route("/api/predict", get(predict_query).post(predict_json))
        .route("/api/{*rest}", get(not_found).post(not_found))
        .with_state(state);
    Ok(match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    })
}

async fn get_bundle(State(state): State<Arc<AppState>>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], state.document.clone()).into_response()
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn predict_json(
    State(state): State<Arc<AppState>>,
    body: Result<Json<PredictRequest>, JsonRejection>,
) -> Result<Json<PredictResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.body_text()))?;
    predict(&state.bundle, &req).map(Json)
}

async fn predict_query(
    State(state): State<Arc<AppState>>,
    query: Result<Query<PredictRequest>, QueryRejection>,
) -> Result<Json<PredictResponse>, ApiError> {
    let Query(req) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.body_text()))?;
    predict(&state.bundle, &req).map(Json)
}

/// The computation behind `/api/predict`.
pub fn predict(bundle: &LawBundle, req: &PredictRequest) -> Result<PredictResponse, ApiError> {
    let (task, _) = bundle
        .find_task(req.task.trim())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_task", format!("task `{}` is not in the bundle", req.task)))?;
    if req.p == 0.0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "zero_shot_unsupported", "zero-shot unsupported"));
    }
    if !(req.p > 0.0 && req.p <= 1.0) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "out_of_domain", format!("weight p must lie in (0, 1], got {}", req.p)));
    }
    let n = ModelSize::new(req.n).map_err(|_| {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_size", format!("model size n must be positive and finite, got {}", req.n))
    })?;
    let point = predict_point(bundle, task, req.p, n, FormSelection::Auto)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "prediction_failed", e.to_string()))?;
    Ok(PredictResponse { value: point.value, n_eff: point.n_eff, f: point.f })
}
