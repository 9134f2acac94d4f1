use thiserror::Error;

/// Failures of a command, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed scenario files, unwritable outputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numerical or pipeline failure; the message carries the stage tag.
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<powersym::Error> for CliError {
    fn from(e: powersym::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}
