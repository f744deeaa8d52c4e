//! HTTP surface: classify, feedback, recent and health.
//!
//! Bodies are JSON. Errors carry a machine-readable `error` code next to a
//! human `message`. Unknown request fields are ignored.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::handler::HandlerWithoutStateExt;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cira_core::baseline::{cue_classify, CueLexicon};
use cira_core::model::Model;
use cira_core::{Label, Prediction};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::store::{FeedbackRecord, FeedbackStore, ReviewError, Verdict};

pub const MAX_TEXT_CHARS: usize = 10_000;
pub const DEFAULT_RECENT: usize = 5;
pub const MAX_RECENT: usize = 100;

/// Whatever answers classification requests.
pub enum Backend {
    Baseline(CueLexicon),
    Trained(Arc<Model>),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Baseline(_) => "baseline",
            Backend::Trained(_) => "trained",
        }
    }

    pub fn classify(&self, text: &str) -> cira_core::Result<Prediction> {
        match self {
            Backend::Baseline(lexicon) => cue_classify(text, lexicon),
            Backend::Trained(model) => model.classify(text),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub backend: Arc<Backend>,
    pub store: Arc<FeedbackStore>,
}

impl AppState {
    pub fn new(backend: Backend, store: FeedbackStore) -> Self {
        Self {
            backend: Arc::new(backend),
            store: Arc::new(store),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        tracing::error!("{message}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let (status, code) = match &e {
            ReviewError::UnknownRecord(_) => (StatusCode::NOT_FOUND, "unknown_record"),
            ReviewError::AlreadyReviewed(_) => (StatusCode::CONFLICT, "already_reviewed"),
            ReviewError::NotACorrection => (StatusCode::BAD_REQUEST, "not_a_correction"),
            ReviewError::MissingCorrectedLabel => (StatusCode::BAD_REQUEST, "missing_corrected_label"),
            ReviewError::UnexpectedCorrectedLabel => (StatusCode::BAD_REQUEST, "unexpected_corrected_label"),
            ReviewError::InvalidVerdict => (StatusCode::BAD_REQUEST, "invalid_verdict"),
            ReviewError::Store(_) => return Self::internal(&e),
        };
        Self::new(status, code, e.to_string())
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))
}

#[derive(Deserialize)]
struct ClassifyRequest {
    text: String,
}

#[derive(Serialize)]
struct ClassifyResponse {
    label: Label,
    confidence: f64,
    record_id: u64,
}

async fn classify(State(state): State<AppState>, body: Bytes) -> Result<Json<ClassifyResponse>, ApiError> {
    let ClassifyRequest { text } = parse_body(&body)?;
    if text.trim().is_empty() {
        return Err(ApiError::bad_request("empty_text", "text is empty"));
    }
    if text.chars().count() > MAX_TEXT_CHARS {
        return Err(ApiError::bad_request(
            "text_too_long",
            format!("text exceeds {MAX_TEXT_CHARS} characters"),
        ));
    }
    // the forward pass and the log write both block
    let record = tokio::task::spawn_blocking(move || {
        let prediction = state.backend.classify(&text).map_err(ApiError::internal)?;
        state.store.append(&text, &prediction).map_err(ApiError::internal)
    })
    .await
    .map_err(ApiError::internal)??;
    Ok(Json(ClassifyResponse {
        label: record.predicted_label,
        confidence: record.confidence,
        record_id: record.id,
    }))
}

#[derive(Deserialize)]
struct FeedbackRequest {
    record_id: u64,
    verdict: String,
    #[serde(default)]
    corrected_label: Option<Label>,
}

async fn feedback(State(state): State<AppState>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let request: FeedbackRequest = parse_body(&body)?;
    let verdict = match request.verdict.as_str() {
        "confirmed" => Verdict::Confirmed,
        "corrected" => Verdict::Corrected,
        other => {
            return Err(ApiError::bad_request(
                "invalid_verdict",
                format!("verdict must be \"confirmed\" or \"corrected\", got {other:?}"),
            ))
        }
    };
    tokio::task::spawn_blocking(move || state.store.review(request.record_id, verdict, request.corrected_label))
        .await
        .map_err(ApiError::internal)??;
    Ok(Json(json!({ "ok": true })))
}

async fn recent(
    State(state): State<AppState>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Json<Vec<FeedbackRecord>>, ApiError> {
    let n = match query.get("n") {
        None => DEFAULT_RECENT,
        Some(raw) => raw
            .parse::<usize>()
            .ok()
            .filter(|n| (1..=MAX_RECENT).contains(n))
            .ok_or_else(|| ApiError::bad_request("invalid_n", format!("n must be an integer in 1..={MAX_RECENT}")))?,
    };
    Ok(Json(state.store.read_recent(n)))
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "model": state.backend.name(),
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

/// Builds the application. When `ui_dir` is given its files are served at
/// `/`; anything else unmatched gets a JSON 404.
pub fn router(state: AppState, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/classify", post(classify))
        .route("/api/feedback", post(feedback))
        .route("/api/recent", get(recent))
        .route("/api/health", get(health))
        .route("/api/{*rest}", axum::routing::any(not_found))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).fallback(not_found.into_service())),
        None => api.fallback(not_found),
    }
}
