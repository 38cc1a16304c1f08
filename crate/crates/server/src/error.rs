use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use ehr_core::pipeline::PipelineError;
use ehr_core::{Error, ErrorKind};
use serde_json::{json, Value};

/// Error body shared by every endpoint: `error_kind`, `detail`, and for
/// validation failures the offending `fields`.
#[derive(Debug)]
pub struct ApiError(pub PipelineError);

impl From<Error> for ApiError {
    fn from(error: Error) -> Self {
        ApiError(PipelineError { layer: None, error })
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        ApiError(e)
    }
}

pub fn error_response(kind: ErrorKind, mut body: Value, retry_after: Option<u64>) -> Response {
    if body.get("layer").is_some_and(Value::is_null) {
        body.as_object_mut().map(|o| o.remove("layer"));
    }
    let status = StatusCode::from_u16(kind.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let mut resp = (status, Json(body)).into_response();
    if let Some(secs) = retry_after {
        resp.headers_mut().insert("retry-after", HeaderValue::from(secs));
    }
    resp
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let retry = match &self.0.error {
            Error::RateLimited { retry_after } => Some(*retry_after),
            _ => None,
        };
        error_response(self.0.kind(), self.0.body(), retry)
    }
}

pub fn simple_error(kind: ErrorKind, detail: &str) -> Response {
    error_response(kind, json!({ "error_kind": kind, "detail": detail }), None)
}
