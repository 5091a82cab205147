use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use vulnembed::pipeline::PipelineError;

/// Error body `{"error": code, "detail": text}` with its HTTP status.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub detail: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        Self { status, code: code.to_string(), detail: detail.into() }
    }

    pub fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", detail)
    }

    pub fn not_found(code: &str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, detail)
    }

    pub fn unavailable(code: &str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, code, detail)
    }

    pub fn not_loaded(e: PipelineError) -> Self {
        if e.is_missing_prerequisite() {
            Self::unavailable("models_not_loaded", e.to_string())
        } else {
            e.into()
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::UnparsableSource => StatusCode::BAD_REQUEST,
            PipelineError::UnknownFunction(_) | PipelineError::UnknownReport(_) => StatusCode::NOT_FOUND,
            PipelineError::Feedback(_) => StatusCode::UNPROCESSABLE_ENTITY,
            e if e.is_missing_prerequisite() => StatusCode::SERVICE_UNAVAILABLE,
            e if e.code() == "manifest_conflict" => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let code = if status == StatusCode::SERVICE_UNAVAILABLE { "models_not_loaded" } else { e.code() };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.code, "detail": self.detail }))).into_response()
    }
}
