use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cryptolab_core::api::{Body, ErrorBody};
use cryptolab_core::coach::CoachError;
use cryptolab_core::lessons::{ProgressError, QuizError, StatsError};
use cryptolab_core::scenario::ScenarioError;

/// An error as the client sees it: a status plus `{code, message}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_input", message)
    }

    pub fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing, unknown or expired token")
    }

    pub fn auth_failed() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "auth_failed", "username or password is wrong")
    }

    pub fn internal(message: impl std::fmt::Display) -> Self {
        tracing::error!(error = %message, "internal error");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
    }

    pub fn body(&self) -> Body<ErrorBody> {
        Body::new(ErrorBody {
            code: self.code.to_owned(),
            message: self.message.clone(),
        })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

impl From<ProgressError> for ApiError {
    fn from(e: ProgressError) -> Self {
        match e {
            ProgressError::OutOfOrderStage { .. } => Self::new(StatusCode::CONFLICT, "out_of_order_stage", e.to_string()),
            ProgressError::BadLikert => Self::bad_request(e.to_string()),
        }
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        Self::bad_request(e.to_string())
    }
}

impl From<QuizError> for ApiError {
    fn from(e: QuizError) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_submission", e.to_string())
    }
}

impl From<StatsError> for ApiError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::DegenerateSample => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "degenerate_sample", e.to_string())
            }
            _ => Self::bad_request(e.to_string()),
        }
    }
}

impl From<CoachError> for ApiError {
    fn from(e: CoachError) -> Self {
        match e {
            CoachError::Closed => Self::new(StatusCode::CONFLICT, "conversation_closed", e.to_string()),
            CoachError::NotAnAttackTrace => Self::bad_request(e.to_string()),
            CoachError::Script(_) => Self::internal(e),
        }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(e)
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        Self::internal(e)
    }
}
