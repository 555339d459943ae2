use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrievalError {
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("query has no indexable tokens")]
    EmptyQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("network error after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl RetrievalError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RetrievalError::Network { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("network error after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("mock script exhausted for prompt ending {0:?}")]
    MockScriptExhausted(String),
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("generation failed: {0}")]
    Gateway(#[from] GatewayError),
}

impl EngineError {
    /// True when the failure came from a model or retrieval backend rather
    /// than from the caller's input.
    pub fn is_backend_failure(&self) -> bool {
        match self {
            EngineError::Config(_) => false,
            EngineError::Retrieval(e) => matches!(
                e,
                RetrievalError::Network { .. } | RetrievalError::Protocol(_)
            ),
            EngineError::Gateway(e) => !matches!(e, GatewayError::InvalidRequest(_)),
        }
    }
}
