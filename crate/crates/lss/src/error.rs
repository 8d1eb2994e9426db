use std::path::PathBuf;

use lss_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("remote reasoner: {0}")]
    Remote(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn malformed(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Malformed { path: path.into(), line, message: message.into() }
    }

    /// Process exit status: 2 for bad input, 3 for a violated invariant,
    /// 1 for anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Malformed { .. } | Error::Usage(_) => 2,
            Error::Invariant(_) => 3,
            Error::Io { .. } | Error::Remote(_) => 1,
            Error::Core(e) => match e {
                CoreError::CorruptHistory(_)
                | CoreError::CorruptProvenance(_)
                | CoreError::ConcurrentEdit { .. }
                | CoreError::BudgetExceeded { .. }
                | CoreError::InvalidParent { .. }
                | CoreError::IllegalTransition { .. } => 3,
                CoreError::Reasoner(_) => 1,
                _ => 2,
            },
        }
    }
}
