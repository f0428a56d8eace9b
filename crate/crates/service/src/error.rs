use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::json;

use lsinspect::Error as CoreError;

/// Machine-readable failure, rendered as `{"error": {code, message, fields?}}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{} {}: {}", status.as_u16(), body.code, body.message)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                fields: Vec::new(),
            },
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn invalid(message: impl Into<String>, fields: Vec<String>) -> Self {
        let mut e = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_params", message);
        e.body.fields = fields;
        e
    }

    pub fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    /// Build from a serde error on a params object, naming the offending field
    /// when the message quotes one.
    pub fn from_params(err: &serde_json::Error) -> Self {
        let msg = err.to_string();
        let fields = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field"))
            .map(|f| vec![f.to_string()])
            .unwrap_or_default();
        Self::invalid(msg, fields)
    }
}

/// Short code naming a core error's category.
pub fn core_code(err: &CoreError) -> &'static str {
    match err {
        CoreError::Parse { .. } | CoreError::Json(_) => "parse",
        CoreError::Taxonomy(_) => "taxonomy",
        CoreError::Bounds { .. } | CoreError::InvalidBox(..) => "bounds",
        CoreError::Validation(_) => "validation",
        CoreError::Param { .. } => "invalid_params",
        CoreError::Capacity(_) => "capacity",
        CoreError::Numeric(_) => "numeric",
        CoreError::Contract(_) => "contract",
        CoreError::Resolution(_) => "resolution",
        CoreError::Comparison(_) => "comparison",
        CoreError::Undefined(_) => "undefined",
        CoreError::Detection(_) => "detection",
        CoreError::Io { .. } => "io",
        CoreError::Codec { .. } => "codec",
    }
}

impl From<CoreError> for ApiError {
    fn from(err: CoreError) -> Self {
        let status = if err.is_io() {
            StatusCode::INTERNAL_SERVER_ERROR
        } else {
            StatusCode::UNPROCESSABLE_ENTITY
        };
        let mut e = ApiError::new(status, core_code(&err), err.to_string());
        if let CoreError::Param { name, .. } = &err {
            e.body.fields.push(name.to_string());
        }
        e
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.body }))).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
