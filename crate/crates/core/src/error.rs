use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad format: {0}")]
    BadFormat(String),
    #[error("truncated input: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid label `{0}`")]
    InvalidLabel(String),
    #[error("zero total energy in range window")]
    ZeroEnergy,
    #[error("trajectory leaves the range axis: bin {bin:.2} outside [0, {max}]")]
    TrajectoryOutOfRange { bin: f64, max: usize },
    #[error("time warp stayed non-monotone after {0} attempts")]
    WarpRetriesExhausted(usize),
    #[error("insufficient participants: need {needed}, have {available}")]
    InsufficientParticipants { needed: usize, available: usize },
    #[error("evaluation leakage: {0}")]
    Leakage(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to failures during computation.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Io { .. }
                | Error::BadFormat(_)
                | Error::Truncated { .. }
                | Error::NonFinite { .. }
                | Error::InvalidLabel(_)
                | Error::Json(_)
                | Error::InsufficientParticipants { .. }
        )
    }
}
