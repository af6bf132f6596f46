use dptraverse::Error;

/// Failures of a CLI command, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numeric divergence: {0}")]
    Divergence(String),
}

impl CliError {
    /// 2 config, 3 I/O, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Checkpoint(_) => CliError::Io(msg),
            Error::TrainingDivergence { .. } | Error::SamplerDivergence { .. } | Error::LinearAlgebra(_) => {
                CliError::Divergence(msg)
            }
            _ => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
