use std::path::PathBuf;

/// Errors raised by the planner library.
///
/// Every variant maps to one stable [`ErrorKind`] so front ends can turn
/// failures into machine-parsable codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("binding error: {0}")]
    Binding(String),

    #[error("level {level}: no admissible candidates ({reason})")]
    EmptyCandidates { level: usize, reason: String },

    #[error("inconsistent chain: {0}")]
    InconsistentChain(String),

    #[error("unsupported bank format version {found} (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },

    #[error("bank built for different hardware (bank digest {bank}, descriptor digest {hardware})")]
    DigestMismatch { bank: String, hardware: String },

    #[error("corrupt bank: {0}")]
    CorruptBank(String),

    #[error("empty bank: {0}")]
    EmptyBank(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("buffer for level {level} needs {bytes} bytes but the level holds {capacity}")]
    BufferCapacity { level: usize, bytes: u64, capacity: u64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification of [`Error`] values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Validation,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse(_) => ErrorKind::Parse,
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    /// Short stable code, used as the prefix of CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse(_) => "parse",
            Error::Validation { .. } => "validation",
            Error::Binding(_) => "binding",
            Error::EmptyCandidates { .. } => "empty-candidates",
            Error::InconsistentChain(_) => "inconsistent-chain",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::DigestMismatch { .. } => "digest-mismatch",
            Error::CorruptBank(_) => "corrupt-bank",
            Error::EmptyBank(_) => "empty-bank",
            Error::InvalidPlan(_) => "invalid-plan",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::BufferCapacity { .. } => "buffer-capacity",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
