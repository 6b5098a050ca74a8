use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("insufficient negatives: {0}")]
    InsufficientNegatives(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("vocabulary error: unknown token {0:?}")]
    Vocabulary(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("divergence at iteration {iteration}: {msg}")]
    Divergence { iteration: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Broad failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parameter(_) | Error::Config(_) | Error::Vocabulary(_) => ErrorKind::Config,
            Error::Divergence { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
