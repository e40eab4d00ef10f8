use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration. `line` is 1-based when the error came from a config file.
    #[error("{}configuration error: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("insufficient data: requested {requested}, only {available} available")]
    InsufficientData { requested: usize, available: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed file: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config { line: None, message: message.into() }
    }

    /// Line 0 marks a value that did not come from a file.
    pub fn config_at(line: usize, message: impl Into<String>) -> Self {
        Error::Config { line: (line > 0).then_some(line), message: message.into() }
    }

    pub fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape { expected: expected.to_string(), actual: actual.to_string() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
