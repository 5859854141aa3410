use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants map onto the failure classes the CLI reports: [`Error::Config`]
/// and [`Error::Validation`] are user-facing validation failures, the rest
/// are runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt file: {0}")]
    Corruption(String),
    #[error("empty embedding set: {0}")]
    EmptySet(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("task error: {0}")]
    Task(String),
    #[error("state error: {0}")]
    State(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("at training step {step}: {source}")]
    AtStep {
        step: usize,
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

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Validation(_) | Error::Config(_) | Error::Format(_) | Error::EmptySet(_) => true,
            Error::AtStep { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
