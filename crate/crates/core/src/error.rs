use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by chat and embedding backends.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// A replay backend was asked for a prompt it has no fixture for.
    #[error("unresolved replay request (digest {digest})")]
    UnresolvedReplay { digest: String },
    #[error("transport failure: {message}")]
    Transport { message: String, retryable: bool },
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
    #[error("fixture {path}: {message}")]
    Fixture { path: PathBuf, message: String },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { retryable, .. } => *retryable,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    /// Errors that must abort a whole run instead of a single document.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            BackendError::UnresolvedReplay { .. } | BackendError::Fixture { .. }
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid triplet: {0}")]
    InvalidTriplet(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unbound placeholder `{{{0}}}`")]
    UnboundPlaceholder(String),
    #[error("ambiguous MCQ response: {0:?}")]
    AmbiguousMcq(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cannot normalize a zero-length embedding")]
    ZeroVector,
    #[error("index is empty")]
    EmptyIndex,
    #[error("duplicate index key `{0}`")]
    DuplicateKey(String),
    #[error("gold relation `{0}` is not present in the schema index")]
    UnknownGoldRelation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{path}:{line}: {message}")]
    Input {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn input(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Input {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn is_fatal(&self) -> bool {
        matches!(self, Error::Backend(b) if b.is_fatal())
    }
}
