//! HTTP JSON API over a [`ListeningTest`].
//!
//! | Method | Path | Body | Response |
//! |---|---|---|---|
//! | POST | `/sessions` | [`NewSession`] | [`SessionInfo`] |
//! | GET | `/sessions/{id}` | | [`SessionInfo`] |
//! | GET | `/sessions/{id}/next` | | [`ComparisonPayload`] |
//! | GET | `/audio/{stimulus_id}` | | `audio/wav` bytes |
//! | POST | `/results` | [`Submission`] | [`Standings`] |
//! | GET | `/standings` | | [`Standings`] |
//! | GET | `/stats` | | [`AssessorStats`](mdxkit_core::rating::AssessorStats) |
//!
//! Errors are `{"error": code, "message": text}` with a 4xx or 5xx status.

use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use super::{ListeningTest, NewSession, ServiceError, StimulusIndex, Submission};

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            Self::UnknownSession(_) | Self::UnknownComparison(_) | Self::UnknownStimulus(_) => StatusCode::NOT_FOUND,
            Self::DuplicateSubmission(_) | Self::PlanExhausted => StatusCode::CONFLICT,
            Self::InvalidRequest(_) | Self::Rating(mdxkit_core::rating::RatingError::InvalidRecord(_)) => {
                StatusCode::BAD_REQUEST
            }
            Self::Crashed => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.code(), message: self.to_string() })).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct AppState {
    test: Arc<Mutex<ListeningTest>>,
    index: Arc<StimulusIndex>,
}

impl AppState {
    pub fn new(test: ListeningTest) -> Self {
        let index = Arc::new(test.index().clone());
        Self { test: Arc::new(Mutex::new(test)), index }
    }

    fn lock(&self) -> MutexGuard<'_, ListeningTest> {
        self.test.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/next", get(next))
        .route("/audio/{stimulus_id}", get(audio))
        .route("/results", post(results))
        .route("/standings", get(standings))
        .route("/stats", get(stats))
        .with_state(state)
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

async fn create_session(State(s): State<AppState>, Json(req): Json<NewSession>) -> ApiResult<super::SessionInfo> {
    Ok(Json(s.lock().create_session(req)?))
}

async fn session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<super::SessionInfo> {
    Ok(Json(s.lock().session(&id)?))
}

async fn next(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<super::ComparisonPayload> {
    Ok(Json(s.lock().next_comparison(&id)?))
}

// clip reads never touch the mutable test state
async fn audio(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let index = s.index.clone();
    let bytes = tokio::task::spawn_blocking(move || index.read_clip(&id))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

async fn results(State(s): State<AppState>, Json(sub): Json<Submission>) -> ApiResult<super::Standings> {
    Ok(Json(s.lock().submit(&sub)?))
}

async fn standings(State(s): State<AppState>) -> ApiResult<super::Standings> {
    Ok(Json(s.lock().standings()?))
}

async fn stats(State(s): State<AppState>) -> ApiResult<mdxkit_core::rating::AssessorStats> {
    Ok(Json(s.lock().stats()?))
}

/// Serves until Ctrl-C.
pub async fn serve(test: ListeningTest, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(test)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
