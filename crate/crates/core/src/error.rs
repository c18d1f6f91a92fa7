use std::path::Path;

use gradcore::GradError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unsupported in {0} beam mode")]
    UnsupportedMode(&'static str),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("empty mask: {0}")]
    EmptyMask(String),
    #[error("non-finite loss at iteration {iteration} (epoch {epoch}): {detail}")]
    NonFiniteLoss { iteration: usize, epoch: usize, detail: String },
    #[error("malformed {what} in {path}: {detail}")]
    Format { what: &'static str, path: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Grad(#[from] GradError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }

    pub fn format(what: &'static str, path: &Path, detail: impl Into<String>) -> Self {
        Error::Format { what, path: path.display().to_string(), detail: detail.into() }
    }

    /// True for failures caused by the filesystem or environment rather than
    /// by invalid inputs.
    pub fn is_environmental(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Grad(GradError::Io { .. }) => true,
            _ => false,
        }
    }
}

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
