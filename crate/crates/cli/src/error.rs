use thiserror::Error;

/// Process exit status: 1 for invalid input or contract failure, 2 for
/// filesystem or environment failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error(transparent)]
    Core(#[from] projtrans::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) | CliError::Missing(_) => 2,
            CliError::Core(e) if e.is_environmental() => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl From<gradcore::GradError> for CliError {
    fn from(e: gradcore::GradError) -> Self {
        CliError::Core(e.into())
    }
}
