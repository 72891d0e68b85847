//! Wire types and error mapping.

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use emobias_core::active_loop::{LabelSubmission, LoopConfig, Session, SessionState, UserProfile};
use emobias_core::{Error, Violation};
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Queried excerpt as shown to the annotator. The source type is
/// deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendingExcerpt {
    pub excerpt_id: String,
    pub title: String,
    pub audio_uri: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Progress {
    pub annotated: usize,
    pub total: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiSessionView {
    pub session_id: String,
    pub state: SessionState,
    pub iteration: usize,
    pub max_iterations: usize,
    pub pending_batch: Vec<PendingExcerpt>,
    pub progress: Progress,
}

pub fn audio_path(excerpt_id: &str) -> String {
    format!("/api/excerpts/{excerpt_id}/audio")
}

impl ApiSessionView {
    pub fn of(s: &Session) -> Self {
        let cfg = s.config();
        Self {
            session_id: s.session_id().to_string(),
            state: s.state(),
            iteration: s.iteration(),
            max_iterations: cfg.max_iterations,
            pending_batch: s
                .pending()
                .iter()
                .filter_map(|id| s.excerpt(id))
                .map(|e| PendingExcerpt {
                    excerpt_id: e.id.clone(),
                    title: e.metadata.title.clone(),
                    audio_uri: audio_path(&e.id),
                })
                .collect(),
            progress: Progress {
                annotated: s.annotations().len(),
                total: cfg.batch_size * cfg.max_iterations,
                batch_size: cfg.batch_size,
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub user_profile: UserProfile,
    pub pool_id: String,
    #[serde(default)]
    pub config: Option<LoopConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitAnnotations {
    pub labels: Vec<LabelSubmission>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolInfo {
    pub pool_id: String,
    pub n_excerpts: usize,
}

#[derive(Debug)]
pub enum ApiError {
    Core(Error),
    BadBody(String),
    NotFinalized,
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Core(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadBody(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Core(Error::Protocol(violations)) => (
                StatusCode::CONFLICT,
                json!({ "error": "protocol_violation", "violations": violations }),
            ),
            ApiError::Core(Error::State(m)) => {
                (StatusCode::CONFLICT, json!({ "error": "invalid_state", "message": m }))
            }
            ApiError::Core(e @ Error::NotFound { .. }) => (
                StatusCode::NOT_FOUND,
                json!({ "error": "not_found", "message": e.to_string() }),
            ),
            ApiError::Core(Error::Validation(m)) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": "validation", "message": m }),
            ),
            ApiError::Core(e) => {
                tracing::error!(error = %e, "request failed");
                (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    json!({ "error": "internal", "message": e.to_string() }),
                )
            }
            ApiError::BadBody(m) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": "malformed_body", "message": m }),
            ),
            ApiError::NotFinalized => (
                StatusCode::FORBIDDEN,
                json!({ "error": "not_finalized", "message": "the report is available once the session is finalized" }),
            ),
            ApiError::Internal(m) => {
                tracing::error!(error = %m, "request failed");
                (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    json!({ "error": "internal", "message": m }),
                )
            }
        };
        (status, axum::Json(body)).into_response()
    }
}

/// Body of a 409 protocol rejection.
#[derive(Debug, Clone, Deserialize)]
pub struct ViolationBody {
    pub error: String,
    pub violations: Vec<Violation>,
}

/// JSON extractor whose every rejection is a 422.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    axum::Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let axum::Json(v) = axum::Json::<T>::from_request(req, state).await?;
        Ok(Body(v))
    }
}
