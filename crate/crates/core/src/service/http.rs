//! JSON-over-HTTP front end for [`ListeningTest`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tower_http::services::ServeDir;

use super::{ListeningTest, RejectReason, ServiceError, SubmitOutcome};

#[derive(Clone)]
struct AppState {
    test: Arc<ListeningTest>,
    admin_token: Arc<str>,
}

/// Options for [`router`].
#[derive(Debug, Clone, Default)]
pub struct HttpConfig {
    /// Bearer token guarding the export endpoint. Export is disabled when empty.
    pub admin_token: String,
    /// Directory of static UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "status": "error", "message": message.into() }))).into_response()
}

fn service_error(e: ServiceError) -> Response {
    match e {
        ServiceError::Unauthorized => error(StatusCode::UNAUTHORIZED, e.to_string()),
        ServiceError::UnknownClip(_) => error(StatusCode::NOT_FOUND, e.to_string()),
        other => {
            log::error!("{other}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
        }
    }
}

async fn next(State(app): State<AppState>, Path(token): Path<String>) -> Response {
    match app.test.next_sample(&token) {
        Ok(n) => Json(n).into_response(),
        Err(e) => service_error(e),
    }
}

async fn submit(State(app): State<AppState>, Path(token): Path<String>, body: Bytes) -> Response {
    let test = app.test.clone();
    // The store fsyncs before returning; keep that off the async workers.
    let outcome = tokio::task::spawn_blocking(move || test.submit_json(&token, &body)).await;
    match outcome {
        Ok(Ok(o @ SubmitOutcome::Accepted(_))) => (StatusCode::OK, Json(o)).into_response(),
        Ok(Ok(o @ SubmitOutcome::Rejected { reason, .. })) => {
            let status = match reason {
                RejectReason::Validation => StatusCode::UNPROCESSABLE_ENTITY,
                RejectReason::OutOfOrder | RejectReason::Duplicate | RejectReason::Completed => StatusCode::CONFLICT,
            };
            (status, Json(o)).into_response()
        }
        Ok(Err(e)) => service_error(e),
        Err(e) => {
            log::error!("submit task failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
        }
    }
}

async fn audio(State(app): State<AppState>, Path(clip_id): Path<String>) -> Response {
    let Some(path) = app.test.audio_path(&clip_id) else {
        return error(StatusCode::NOT_FOUND, format!("no audio for clip {clip_id}"));
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response(),
        Err(e) => {
            log::warn!("{}: {e}", path.display());
            error(StatusCode::NOT_FOUND, format!("no audio for clip {clip_id}"))
        }
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn export(State(app): State<AppState>, headers: HeaderMap) -> Response {
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let authorized = match presented {
        Some(t) => !app.admin_token.is_empty() && constant_time_eq(t.as_bytes(), app.admin_token.as_bytes()),
        None => false,
    };
    if !authorized {
        return error(StatusCode::UNAUTHORIZED, "missing or invalid bearer token");
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], app.test.export_responses()).into_response()
}

pub fn router(test: Arc<ListeningTest>, cfg: &HttpConfig) -> Router {
    let state = AppState { test, admin_token: Arc::from(cfg.admin_token.as_str()) };
    let api = Router::new()
        .route("/api/v1/session/{token}/next", get(next))
        .route("/api/v1/session/{token}/response", post(submit))
        .route("/api/v1/audio/{clip_id}", get(audio))
        .route("/api/v1/admin/export", get(export))
        .with_state(state);
    match &cfg.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process is stopped.
pub async fn serve(test: Arc<ListeningTest>, cfg: &HttpConfig, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(test, cfg)).await
}
