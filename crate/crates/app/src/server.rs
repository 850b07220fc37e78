//! JSON-over-HTTP service for the moderation UI.

use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use memexplain_core::feature_store::Task;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::decisions::{replay, DecisionLog, DecisionRequest};
use crate::explain::{Engine, LookupError};

pub struct AppState {
    pub engine: Engine,
    pub decisions: DecisionLog,
}

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, kind: "bad_request", message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "internal", message: message.into() }
    }
}

impl From<LookupError> for ApiError {
    fn from(e: LookupError) -> Self {
        let (status, kind) = match &e {
            LookupError::UnknownMeme(_) => (StatusCode::NOT_FOUND, "unknown_meme"),
            LookupError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            LookupError::UnknownModel(_) => (StatusCode::NOT_FOUND, "unknown_model"),
            LookupError::UnknownLabel(_) => (StatusCode::NOT_FOUND, "unknown_label"),
            LookupError::NoPrototypes(_) => (StatusCode::NOT_FOUND, "no_prototypes"),
            LookupError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            LookupError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self { status, kind, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.kind, "message": self.message, "status": self.status.as_u16() });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn parse_task(s: &str) -> std::result::Result<Task, ApiError> {
    s.parse().map_err(|_| ApiError::bad_request(format!("unknown task {s:?}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/api/models", get(models))
        .route("/api/memes/{id}", get(meme))
        .route("/api/explain", post(explain))
        .route("/api/prototypes", get(prototypes))
        .route("/api/decisions", post(decide).get(decisions))
        .with_state(state)
}

async fn healthz(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "models": st.engine.models().len() }))
}

async fn models(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "models": st.engine.models() }))
}

#[derive(Deserialize)]
struct MemeQuery {
    task: Option<String>,
}

async fn meme(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<MemeQuery>,
) -> ApiResult<serde_json::Value> {
    let task = q.task.as_deref().map(parse_task).transpose()?;
    let (_, entry) = st.engine.meme(&id, task)?;
    Ok(Json(serde_json::to_value(entry).map_err(|e| ApiError::internal(e.to_string()))?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplainRequest {
    meme_id: String,
    task: Option<String>,
    #[serde(default)]
    models: Vec<String>,
    k: Option<usize>,
}

async fn explain(
    State(st): State<Arc<AppState>>,
    Json(req): Json<ExplainRequest>,
) -> ApiResult<crate::explain::Explanation> {
    let task = req.task.as_deref().map(parse_task).transpose()?;
    let out = tokio::task::spawn_blocking(move || st.engine.explain(&req.meme_id, task, &req.models, req.k))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(out))
}

#[derive(Deserialize)]
struct PrototypeQuery {
    task: String,
    model: String,
    label: Option<String>,
}

async fn prototypes(
    State(st): State<Arc<AppState>>,
    Query(q): Query<PrototypeQuery>,
) -> ApiResult<crate::explain::PrototypePayload> {
    let task = parse_task(&q.task)?;
    Ok(Json(st.engine.prototypes(task, &q.model, q.label.as_deref())?))
}

async fn decide(
    State(st): State<Arc<AppState>>,
    Json(req): Json<DecisionRequest>,
) -> ApiResult<crate::decisions::DecisionRecord> {
    st.engine.meme(&req.meme_id, None)?;
    let rec = st.decisions.append(req).map_err(|e| ApiError::internal(format!("{e:#}")))?;
    Ok(Json(rec))
}

async fn decisions(State(st): State<Arc<AppState>>) -> ApiResult<serde_json::Value> {
    let records = replay(st.decisions.path()).map_err(|e| ApiError::internal(format!("{e:#}")))?;
    Ok(Json(json!({ "decisions": records })))
}

/// Binds before anything is served so a busy port fails startup.
pub async fn bind(addr: &str) -> Result<TcpListener> {
    TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot listen on {addr}"))
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> Result<()> {
    let addr = listener.local_addr()?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
