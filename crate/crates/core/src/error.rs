use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid label {0}: stars must be an integer in 1..=5")]
    InvalidLabel(i64),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("not enough users to build the fixture: need {required}, found {available}")]
    InsufficientUsers { required: usize, available: usize },

    #[error(transparent)]
    Backend(BackendError),

    #[error("cannot resume run: {0}")]
    ResumeMismatch(String),

    #[error("runs were scored on different fixtures (baseline {baseline}, run {run})")]
    FixtureMismatch { baseline: String, run: String },

    #[error("no scored samples: every aggregate is absent")]
    NothingScored,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl From<BackendError> for Error {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(msg) => Error::Validation(msg),
            other => Error::Backend(other),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code for the command line front end: 3 backend
    /// failure, 4 resume mismatch, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Backend(_) => 3,
            Error::ResumeMismatch(_) => 4,
            _ => 2,
        }
    }
}
