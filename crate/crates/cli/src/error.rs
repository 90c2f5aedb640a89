use thiserror::Error;

/// Command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or incompatible data and checkpoints (exit 2).
    #[error("{0}")]
    Data(String),
    /// A verification command found a discrepancy (exit 3).
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<sigrnn::Error> for CliError {
    fn from(e: sigrnn::Error) -> Self {
        use sigrnn::Error as E;
        match e {
            E::Config(_) | E::Shape { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
