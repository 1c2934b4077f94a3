//! JSON error responses. Every engine, store and request failure maps to
//! its own `error_code`.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use latcompass_core::engine::EngineError;
use latcompass_core::generator::BackendError;
use latcompass_core::latent::LatentError;
use latcompass_core::store::StoreError;
use latcompass_core::svm::SvmError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "InternalError", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::warn!(code = self.code, message = %self.message, "request failed");
        }
        (self.status, Json(ErrorBody { error_code: self.code.to_string(), message: self.message })).into_response()
    }
}

fn backend_status(e: &BackendError) -> StatusCode {
    match e {
        BackendError::Unavailable(_) => StatusCode::BAD_GATEWAY,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn svm_status(e: &SvmError) -> StatusCode {
    match e {
        SvmError::IterationLimit { .. } | SvmError::DegenerateHyperplane => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::Backend(b) => backend_status(b),
            EngineError::Svm(s) => svm_status(s),
            EngineError::UnknownImage(_) => StatusCode::NOT_FOUND,
            EngineError::DegenerateStep(_) | EngineError::DegenerateFeatureScale => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        Self::new(backend_status(&e), e.code(), e.to_string())
    }
}

impl From<LatentError> for ApiError {
    fn from(e: LatentError) -> Self {
        Self::bad_request(e.code(), e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownRecord(_) => StatusCode::NOT_FOUND,
            StoreError::DuplicateRecord(_) => StatusCode::CONFLICT,
            StoreError::InvalidRecord(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::StorageFailure { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
