use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use clinrag::corpus::CorpusError;
use clinrag::embed::EmbedError;
use clinrag::retrieval::RetrievalError;
use clinrag::EngineError;
use serde::{Deserialize, Serialize};

/// Wire form of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                detail: None,
            },
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.body.detail = Some(detail.into());
        self
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn session_not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "SessionNotFound",
            "unknown or expired session",
        )
        .with_detail(id)
    }

    pub fn index_not_loaded() -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "IndexNotLoaded",
            "no evidence index is loaded",
        )
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

/// Leading identifier of a `Debug` rendering, i.e. the enum variant name.
fn variant_name<T: std::fmt::Debug>(v: &T) -> String {
    format!("{v:?}")
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '_')
        .collect()
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        Self::bad_request(&variant_name(&e), "case text could not be parsed")
            .with_detail(e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let e = match e {
            EngineError::Corpus(c) => return c.into(),
            other => other,
        };
        let detail = e.to_string();
        let err = match &e {
            EngineError::Llm(_) => Self::new(
                StatusCode::BAD_GATEWAY,
                "ClientUnavailable",
                "LLM client failed",
            ),
            _ if e.is_external() => Self::new(
                StatusCode::BAD_GATEWAY,
                "ProviderUnavailable",
                "embedding provider failed",
            ),
            EngineError::Retrieval(RetrievalError::InvalidK) => {
                Self::bad_request("InvalidK", "k must be at least 1")
            }
            EngineError::Embed(EmbedError::DimMismatch { .. })
            | EngineError::Retrieval(RetrievalError::Embed(_)) => {
                Self::internal("embedding mismatch between snapshot and provider")
            }
            other => Self::internal(format!("{} failure", variant_name(other).to_lowercase())),
        };
        err.with_detail(detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
