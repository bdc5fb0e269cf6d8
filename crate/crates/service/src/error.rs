use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

/// Every error code the service can return, with its HTTP status.
pub const ERROR_CODES: &[(&str, u16)] = &[
    ("invalid-config", 400),
    ("malformed-request", 400),
    ("parse-error", 400),
    ("arity-error", 400),
    ("unknown-command", 400),
    ("unknown-session", 404),
    ("empty-element-list", 409),
    ("index-out-of-range", 409),
    ("payload-too-large", 413),
    ("xml-parse-error", 422),
    ("bounds-parse-error", 422),
    ("bbox-out-of-bounds", 422),
    ("image-error", 422),
    ("unknown-placeholder", 422),
    ("unknown-capture-token", 422),
    ("operation-error", 422),
    ("budget-exhausted", 429),
    ("leak-detected", 500),
    ("internal-error", 500),
    ("adapter-unavailable", 502),
    ("executor-failure", 502),
];

pub fn status_for(code: &str) -> StatusCode {
    let n = ERROR_CODES.iter().find(|(c, _)| *c == code).map_or(500, |(_, s)| *s);
    StatusCode::from_u16(n).expect("valid status")
}

/// Error code attached to a response for the request log.
#[derive(Debug, Clone, Copy)]
pub struct LoggedCode(pub &'static str);

#[derive(Debug)]
pub struct ApiError {
    pub code: &'static str,
    /// Only set for errors caused by the request shape; never carries screen
    /// or instruction content.
    pub message: Option<String>,
}

impl ApiError {
    pub fn new(code: &'static str) -> Self {
        Self { code, message: None }
    }

    pub fn with(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: Some(message.into()) }
    }

    pub fn from_code(e: &impl anonproxy_core::ErrorCode) -> Self {
        Self::new(e.code())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(self.code);
        let mut res = if self.code == "leak-detected" {
            status.into_response()
        } else {
            let mut body = json!({ "status": "error", "error_code": self.code });
            if let Some(m) = self.message {
                body["message"] = m.into();
            }
            (status, Json(body)).into_response()
        };
        res.extensions_mut().insert(LoggedCode(self.code));
        res
    }
}
