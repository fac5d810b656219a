//! Error body shared by the HTTP API and the CLI: `{code, message, position?}`.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use neuroscope_core::{
    AggregateError, GraphError, ProjectionError, SampleError, StoreError, SubsetError,
};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub position: Option<usize>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            position: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidRequest", message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn body(&self) -> Value {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(p) = self.position {
            body["position"] = p.into();
        }
        body
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(self.body())).into_response()
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "UnknownNode" | "UnknownSubset" | "UnknownJob" | "IndexOutOfRange" | "NotPinned" => {
            StatusCode::NOT_FOUND
        }
        "DuplicateSubsetId" => StatusCode::CONFLICT,
        "MissingFile" | "IoError" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn from_code(code: &'static str, message: String) -> ApiError {
    ApiError::new(status_for(code), code, message)
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        from_code(e.code(), e.to_string())
    }
}

impl From<GraphError> for ApiError {
    fn from(e: GraphError) -> Self {
        from_code(e.code(), e.to_string())
    }
}

impl From<SubsetError> for ApiError {
    fn from(e: SubsetError) -> Self {
        let mut err = from_code(e.code(), e.to_string());
        err.position = e.position();
        err
    }
}

impl From<AggregateError> for ApiError {
    fn from(e: AggregateError) -> Self {
        from_code(e.code(), e.to_string())
    }
}

impl From<ProjectionError> for ApiError {
    fn from(e: ProjectionError) -> Self {
        from_code(e.code(), e.to_string())
    }
}

impl From<SampleError> for ApiError {
    fn from(e: SampleError) -> Self {
        from_code(e.code(), e.to_string())
    }
}
