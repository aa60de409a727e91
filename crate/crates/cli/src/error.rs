use std::process::ExitCode;

use paydist_core::config::ConfigError;
use paydist_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("{0}")]
    InsufficientData(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::InsufficientData(_) => 4,
        })
    }

    pub fn io(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{context}: {e}"))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Domain(m) => CliError::Config(m),
            CoreError::NonConvergence { .. } | CoreError::StepFailure { .. } => {
                CliError::NonConvergence(e.to_string())
            }
            CoreError::InsufficientData { .. } => CliError::InsufficientData(e.to_string()),
        }
    }
}
