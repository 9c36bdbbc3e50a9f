use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: usize, message: String },

    #[error("unsupported port state `{0}`")]
    UnsupportedState(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("session is closed; no further verdicts accepted")]
    SessionClosed,

    #[error("debugging cost is undefined when no host is vulnerable")]
    UndefinedDebuggingCost,

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("scanner invocation failed: {0}")]
    Scanner(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short category tag used by the CLI when reporting failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Xml { .. } => "parse",
            Error::UnsupportedState(_) => "unsupported-state",
            Error::Data(_) | Error::Schema(_) => "data",
            Error::Parameter(_) => "parameter",
            Error::SessionClosed => "session",
            Error::UndefinedDebuggingCost => "metric",
            Error::Generation(_) => "generation",
            Error::Scanner(_) => "scanner",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Opens a file, naming it in the error.
    pub(crate) fn open(path: &std::path::Path) -> Result<std::fs::File> {
        std::fs::File::open(path).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
    }
}
