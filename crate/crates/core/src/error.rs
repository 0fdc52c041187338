use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two inputs that must agree (usually vocabularies) do not.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("ingestion failed for {path}: line {line}: {message}")]
    Ingestion {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("model file {path}: {message}")]
    ModelFormat { path: PathBuf, message: String },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failures of a remote logprob backend. Each kind is distinct so callers can
/// tell a slow server from a broken one.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("request to {endpoint} timed out")]
    Timeout { endpoint: String },

    #[error("endpoint {endpoint} unreachable: {message}")]
    Unreachable { endpoint: String, message: String },

    #[error("endpoint {endpoint} returned HTTP {status}")]
    Status { endpoint: String, status: u16 },

    #[error("malformed payload from {endpoint}: {message}")]
    MalformedPayload { endpoint: String, message: String },

    #[error("expected {expected} logprobs, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("logprobs not normalized: logsumexp = {logsumexp}")]
    NotNormalized { logsumexp: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
