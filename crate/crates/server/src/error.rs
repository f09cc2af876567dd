use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use misattrib_core::corpus::CorpusError;
use misattrib_core::evalrun::EvalError;
use misattrib_core::gateway::GatewayError;
use misattrib_core::pairwise::PairwiseError;
use misattrib_core::store::StoreError;
use misattrib_core::workflow::WorkflowError;
use serde::Serialize;
use serde_json::Value;

/// `{code, message, detail}` with an HTTP status.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError { status, code: code.into(), message: message.into(), detail: Value::Null }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthorized", message)
    }

    pub fn forbidden(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, code, message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "InvalidRequest", message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "NotExpert" | "NotAssigned" | "CheckerIsAdjudicator" | "UnknownAnnotator" => StatusCode::FORBIDDEN,
        "UnknownTask" | "UnknownBatch" | "UnknownItem" | "UnknownBackend" => StatusCode::NOT_FOUND,
        "WrongState" | "DuplicateSubmission" | "TaskExists" | "BatchNotComplete" | "BatchNotUnderQc"
        | "ConflictingVote" | "DuplicateId" => StatusCode::CONFLICT,
        "BackendUnavailable" | "Timeout" => StatusCode::BAD_GATEWAY,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        ApiError::new(status_for(e.code()), e.code(), e.to_string())
    }
}

impl From<PairwiseError> for ApiError {
    fn from(e: PairwiseError) -> Self {
        ApiError::new(status_for(e.code()), e.code(), e.to_string())
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        ApiError::new(status_for(e.code()), e.code(), e.to_string())
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        ApiError::new(status_for(e.code()), e.code(), e.to_string())
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        ApiError::new(status_for(e.code()), e.code(), e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StoreError", e.to_string())
    }
}
