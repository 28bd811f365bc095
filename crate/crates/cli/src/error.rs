use prior_transport::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(#[from] Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    /// Input problems reported by the core library count as configuration
    /// errors.
    pub fn from_validation(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::DimensionMismatch(_) | Error::EmptySupport(_) | Error::NonControllable { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numerical(other),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(Error::NonControllable { .. }) => 2,
            CliError::Numerical(_) | CliError::Io { .. } => 1,
        }
    }
}
