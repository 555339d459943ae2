use std::path::Path;

use iterrag_core::jsonl::JsonlError;
use iterrag_core::EngineError;
use thiserror::Error;

/// Failures that end a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, missing input files, inconsistent inputs.
    #[error("{0}")]
    Usage(String),
    /// A model or retrieval backend failed.
    #[error("{0}")]
    Backend(String),
    /// Input files exist but cannot be understood.
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Data(_) | CliError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Backend(_) => "backend",
            CliError::Data(_) => "data",
            CliError::Io(_) => "io",
        }
    }

    /// The single stderr line printed on failure.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
        .to_string()
    }

    pub fn missing_file(what: &str, path: &Path) -> Self {
        CliError::Usage(format!("{what} file not found: {}", path.display()))
    }

    pub fn jsonl(path: &Path, e: JsonlError) -> Self {
        match e {
            JsonlError::Io(e) => CliError::Usage(format!("cannot read {}: {e}", path.display())),
            other => CliError::Data(format!("{}: {other}", path.display())),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        if e.is_backend_failure() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}
