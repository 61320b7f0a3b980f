//! HTTP API over a loaded [`Engine`] and a [`SessionStore`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::pipeline::{AnswerEnvelope, Engine, PipelineError, SessionStore};
use crate::unirep::ConversationTurn;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: address already in use")]
    AddrInUse { addr: SocketAddr },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server: {0}")]
    Serve(#[source] std::io::Error),
}

/// A structured error body: `{"error": {"stage": .., "message": ..}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    stage: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, stage: &'static str, message: impl Into<String>) -> Self {
        Self { status, stage, message: message.into() }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::UnknownSession(_) => StatusCode::NOT_FOUND,
            PipelineError::Contextualize(_) | PipelineError::Config(_) => StatusCode::BAD_REQUEST,
            PipelineError::Retrieve(_) | PipelineError::Rank(_) | PipelineError::Generate(_) => {
                StatusCode::BAD_GATEWAY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.stage(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "stage": self.stage, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AskRequest {
    pub question: String,
}

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    store: SessionStore,
    // serializes asks within a session
    locks: Arc<Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>>,
}

impl AppState {
    fn session_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.locks.lock().expect("lock map poisoned");
        locks.entry(id.to_string()).or_default().clone()
    }
}

pub fn router(engine: Arc<Engine>, store: SessionStore) -> Router {
    let state = AppState { engine, store, locks: Arc::default() };
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/ask", post(ask))
        .route("/v1/clues/{id}", get(get_clue))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "request", "no such route") })
        .with_state(state)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>, store: SessionStore, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| {
        if source.kind() == std::io::ErrorKind::AddrInUse {
            ServiceError::AddrInUse { addr }
        } else {
            ServiceError::Bind { addr, source }
        }
    })?;
    tracing::info!(addr = %listener.local_addr().unwrap_or(addr), "listening");
    axum::serve(listener, router(engine, store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, PipelineError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn healthz(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "clues": s.engine.index().len(),
        "index_fingerprint": s.engine.manifest().fingerprint,
    }))
}

async fn create_session(State(s): State<AppState>) -> Result<(StatusCode, Json<CreatedSession>), ApiError> {
    let store = s.store.clone();
    let session = blocking(move || store.create()).await?;
    Ok((StatusCode::CREATED, Json(CreatedSession { session_id: session.session_id })))
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let store = s.store.clone();
    let missing = id.clone();
    let session = blocking(move || store.load(&id)?.ok_or(PipelineError::UnknownSession(missing))).await?;
    Ok(Json(session).into_response())
}

async fn ask(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<AnswerEnvelope>, ApiError> {
    let req: AskRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "request", format!("invalid body: {e}")))?;
    let lock = s.session_lock(&id);
    let _guard = lock.lock().await;
    let (engine, store) = (s.engine.clone(), s.store.clone());
    let envelope = blocking(move || {
        let session = store.load(&id)?.ok_or_else(|| PipelineError::UnknownSession(id.clone()))?;
        let envelope = engine.answer(&session.turns, &req.question)?;
        let turn = ConversationTurn { question: req.question, answer: envelope.answer.text.clone() };
        store.append(&id, &turn)?;
        Ok(envelope)
    })
    .await?;
    Ok(Json(envelope))
}

async fn get_clue(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    match s.engine.index().clue(&id) {
        Some(clue) => Ok(Json(clue).into_response()),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "clues", format!("unknown clue {id:?}"))),
    }
}
