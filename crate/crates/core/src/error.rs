use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure kinds for every probing, scoring and loading operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("backend does not support {0}")]
    Unsupported(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid attention tensor: {0}")]
    InvalidTensor(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("need at least 2 attribute terms, got {0}")]
    InsufficientAttributes(usize),

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("threshold must be > 0, got {0}")]
    InvalidThreshold(f64),

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("margin must be > 0, got {0}")]
    InvalidMargin(f64),

    #[error("category sets differ: {0}")]
    CategoryMismatch(String),

    #[error("perturbation covers every column: {0}")]
    DegeneratePerturbation(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("empty input: {0}")]
    EmptyResults(&'static str),

    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
