use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands (or an operand and an expectation) disagree on shape.
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("vocabulary error: id {id} out of range for size {size} ({what})")]
    Vocabulary {
        what: String,
        id: usize,
        size: usize,
    },

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceLength { len: usize, max: usize },

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: {0}")]
    Checksum(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category label used by the CLI's error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Vocabulary { .. } => "vocabulary",
            Error::SequenceLength { .. } => "sequence-length",
            Error::Contract(_) => "contract",
            Error::Format(_) => "format",
            Error::Checksum(_) => "checksum",
            Error::NonFinite(_) => "non-finite",
            Error::Training(_) => "training",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
        }
    }
}
