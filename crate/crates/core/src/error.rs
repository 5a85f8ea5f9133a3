use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Divergence(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(origin: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Error::Parse {
            origin: origin.into(),
            message: err.to_string(),
        }
    }

    /// True for errors caused by the run configuration rather than the data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
