use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use openchamber_core::control::{ControlError, EffectError};
use openchamber_core::datastore::StoreError;
use openchamber_core::recipe::RecipeError;
use openchamber_core::syncproto::{ServerError, PROTOCOL_VERSION, VERSION_HEADER};

/// Every `code` an error response can carry.
pub const ERROR_CODES: &[&str] = &[
    // recipe parser, verbatim
    "malformed_json",
    "unknown_format",
    "empty_operations",
    "unsorted_offsets",
    "unknown_variable",
    "value_out_of_range",
    "duplicate_set_point",
    // control
    "abort_requested",
    "run_active",
    "no_active_run",
    "actuation_during_run",
    "limit_too_short",
    "invalid_config",
    "bad_calibration",
    "simulation_error",
    "loop_stopped",
    "unknown_effect",
    "out_of_domain",
    // store
    "empty_id",
    "revision_conflict",
    "storage_full",
    "unknown_run",
    "wrong_kind",
    "store_corrupt",
    "store_locked",
    "store_version",
    "store_io",
    // replication
    "protocol_version_mismatch",
    "checksum_mismatch",
    // request level
    "bad_request",
    "unauthorized",
    "unknown_recipe",
    "not_found",
    "method_not_allowed",
    "internal",
];

/// JSON error body: `{"status": 404, "code": "unknown_run", "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{status} {code}: {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        debug_assert!(ERROR_CODES.contains(&code), "{code}");
        ApiError { status, code: code.into(), message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(400, "bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(404, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(500, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut resp = (status, Json(&self)).into_response();
        if self.code == "protocol_version_mismatch" {
            resp.headers_mut().insert(VERSION_HEADER, PROTOCOL_VERSION.into());
        }
        resp
    }
}

impl From<RecipeError> for ApiError {
    fn from(e: RecipeError) -> Self {
        ApiError::new(400, e.code(), e.to_string())
    }
}

impl From<ControlError> for ApiError {
    fn from(e: ControlError) -> Self {
        let status = match &e {
            ControlError::RunActive
            | ControlError::NoActiveRun
            | ControlError::ActuationDuringRun
            | ControlError::AbortRequested(_) => 409,
            ControlError::LimitTooShort { .. } | ControlError::Config(_) | ControlError::Calibration(_) => 400,
            ControlError::Sim(_) => 500,
            ControlError::LoopStopped => 503,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<EffectError> for ApiError {
    fn from(e: EffectError) -> Self {
        let code = match e {
            EffectError::UnknownEffect(_) => "unknown_effect",
            EffectError::OutOfDomain { .. } => "out_of_domain",
        };
        ApiError::new(400, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::EmptyId => 400,
            StoreError::UnknownRun(_) => 404,
            StoreError::RevisionConflict { .. } | StoreError::WrongKind { .. } => 409,
            StoreError::StorageFull { .. } => 507,
            StoreError::Corrupt(_) | StoreError::Locked(_) | StoreError::Version(_) | StoreError::Io(_) => 500,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        match e {
            ServerError::Store(inner) => inner.into(),
            other => ApiError::new(other.status(), other.code(), other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}
