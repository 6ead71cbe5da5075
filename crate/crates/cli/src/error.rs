use biasprobe::Error;
use thiserror::Error as ThisError;

/// Process exit status classes. Success is 0; clap's own usage errors also
/// exit with 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config,
    Data,
    Capability,
}

impl ExitKind {
    pub fn code(self) -> u8 {
        match self {
            ExitKind::Config => 2,
            ExitKind::Data => 3,
            ExitKind::Capability => 4,
        }
    }
}

#[derive(Debug, ThisError)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Data,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.kind.code()
    }

    pub fn with_hint(mut self, hint: &str) -> Self {
        self.message = format!("{} ({hint})", self.message);
        self
    }
}

/// Flag values are config errors, missing capabilities are capability
/// errors, everything read from files or produced by the model is data.
pub fn classify(e: &Error) -> ExitKind {
    match e.root() {
        Error::InvalidConfig(_) | Error::InvalidThreshold(_) | Error::InvalidMargin(_) => ExitKind::Config,
        Error::Unsupported(_) => ExitKind::Capability,
        _ => ExitKind::Data,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            kind: classify(&e),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
