use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use patchscope_core::Error as CoreError;
use serde_json::json;

use crate::bridge::BridgeError;

/// An error response: status plus a JSON `{"error": ...}` body.
#[derive(Debug, thiserror::Error)]
#[error("{status}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match &e {
            CoreError::DimensionMismatch { .. } | CoreError::ZeroVector | CoreError::InvalidConfig(_) => {
                StatusCode::BAD_REQUEST
            }
            CoreError::InvalidBox { .. }
            | CoreError::BoxOutOfBounds { .. }
            | CoreError::UnknownImage(_)
            | CoreError::UnseenImage(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<BridgeError> for ApiError {
    fn from(e: BridgeError) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::warn!("{}", self.message);
        }
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}
