use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use crate::analysis::AnalysisError;
use crate::koopman::KoopmanError;

/// Error response: `{"error": code, "message": ..., "diagnostic_id"?: ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub diagnostic_id: Option<String>,
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostic_id: Option<&'a str>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: String) -> Self {
        Self { status, code, message, diagnostic_id: None }
    }

    pub fn bad_request(message: String) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(what: String) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what}"))
    }

    pub fn conflict(message: String) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn unprocessable(message: String) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }

    /// 500 with a fresh diagnostic id that is also logged.
    pub fn internal(err: impl std::fmt::Display) -> Self {
        let id = uuid::Uuid::new_v4().to_string();
        log::error!("[{id}] {err}");
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "numerical_failure",
            message: err.to_string(),
            diagnostic_id: Some(id),
        }
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::AngleOnReal(_) => Self::new(StatusCode::CONFLICT, "angle_on_real", e.to_string()),
            AnalysisError::InvalidPair(..) | AnalysisError::InvalidEdit(_) | AnalysisError::InvalidK { .. } => {
                Self::unprocessable(e.to_string())
            }
            AnalysisError::ImaginaryLeak(_) | AnalysisError::Numerics(_) => Self::internal(e),
        }
    }
}

impl From<KoopmanError> for ApiError {
    fn from(e: KoopmanError) -> Self {
        match e {
            KoopmanError::Shape(_) | KoopmanError::TooShort { .. } | KoopmanError::Horizon => {
                Self::unprocessable(e.to_string())
            }
            _ => Self::internal(e),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Body { error: self.code, message: &self.message, diagnostic_id: self.diagnostic_id.as_deref() };
        (self.status, Json(body)).into_response()
    }
}
