use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration, detected before any tick runs.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Scenario or config file rejected by the parser.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Broken internal bookkeeping (double release, USF clash).
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors the CLI maps to exit code 2.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
