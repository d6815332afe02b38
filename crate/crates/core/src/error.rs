use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum MeldError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MeldError> = std::result::Result<T, E>;

impl From<csv::Error> for MeldError {
    fn from(err: csv::Error) -> Self {
        let row = err
            .position()
            .map(|pos| pos.line() as usize)
            .unwrap_or_default();
        match err.kind() {
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => MeldError::Data {
                row,
                message: format!("ragged row: expected {expected_len} cells, found {len}"),
            },
            _ => MeldError::Parse(err.to_string()),
        }
    }
}

impl From<serde_json::Error> for MeldError {
    fn from(err: serde_json::Error) -> Self {
        MeldError::Parse(err.to_string())
    }
}

impl From<toml::de::Error> for MeldError {
    fn from(err: toml::de::Error) -> Self {
        MeldError::Parse(err.to_string())
    }
}
