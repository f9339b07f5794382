//! HTTP JSON routes.
//!
//! | method | path | response |
//! |---|---|---|
//! | GET | `/sessions` | list of session statuses |
//! | GET | `/sessions/{id}/next` | oldest pending query, or 204 when none |
//! | GET | `/sessions/{id}/status` | `{answered, pending, policy_progress, ...}` |
//! | POST | `/queries/{id}/answer` | body `{"winner": "left" \| "right"}` |
//!
//! Errors are `{"error": {"kind": ..., "message": ...}}`.

use std::net::SocketAddr;
use std::path::PathBuf;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::service::PreferenceService;
use crate::session::{SessionStatus, Side, API_SCHEMA_VERSION};
use crate::ServiceError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerBody {
    pub winner: Side,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerAck {
    pub schema_version: u32,
    pub query_id: String,
    pub winner: Side,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionList {
    pub schema_version: u32,
    pub sessions: Vec<SessionStatus>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            Self::UnknownSession(_) | Self::UnknownQuery(_) => StatusCode::NOT_FOUND,
            Self::AlreadyAnswered(_) => StatusCode::CONFLICT,
            Self::BadRequest(_) | Self::BadSpec(_) | Self::BadLog(_) => StatusCode::BAD_REQUEST,
            Self::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": { "kind": self.kind(), "message": self.to_string() } }))).into_response()
    }
}

async fn list(State(svc): State<PreferenceService>) -> Json<SessionList> {
    Json(SessionList { schema_version: API_SCHEMA_VERSION, sessions: svc.sessions() })
}

async fn next(State(svc): State<PreferenceService>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(match svc.next(&id)? {
        Some(q) => Json(q).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn status(
    State(svc): State<PreferenceService>,
    Path(id): Path<String>,
) -> Result<Json<SessionStatus>, ServiceError> {
    Ok(Json(svc.status(&id)?))
}

async fn answer(
    State(svc): State<PreferenceService>,
    Path(id): Path<String>,
    body: Result<Json<AnswerBody>, JsonRejection>,
) -> Result<Json<AnswerAck>, ServiceError> {
    let Json(body) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    svc.answer(&id, body.winner)?;
    Ok(Json(AnswerAck { schema_version: API_SCHEMA_VERSION, query_id: id, winner: body.winner }))
}

/// API routes, plus static files from `ui_dir` for every other path.
pub fn router(service: PreferenceService, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", get(list))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/status", get(status))
        .route("/queries/{id}/answer", post(answer))
        .with_state(service);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    service: PreferenceService,
    listener: tokio::net::TcpListener,
    ui_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service, ui_dir)).with_graceful_shutdown(shutdown).await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}
