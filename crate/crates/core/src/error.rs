use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0} requires beta > 0")]
    ZeroBeta(&'static str),

    #[error("non-finite state at t = {t}: x1 = {x1}, x2 = {x2}")]
    NonFinite { t: f64, x1: f64, x2: f64 },

    #[error("partition function vanished at t = {t}")]
    ZeroPartition { t: f64 },

    #[error("path {path} failed: {source}")]
    Path {
        path: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("environment covers [0, {covered}] but the path needs [0, {needed}]")]
    EnvironmentCoverage { covered: f64, needed: f64 },

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}
