use thiserror::Error;

/// Failure of a command, grouped by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("artifact mismatch: {0}")]
    Artifact(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Output(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Artifact(_) => 5,
        }
    }

    /// Input-side failure: numeric problems keep their own code.
    pub(crate) fn data(e: aqf::Error) -> Self {
        match e {
            aqf::Error::Diverged { .. } | aqf::Error::NonFinite(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }

    pub(crate) fn artifact(e: aqf::Error) -> Self {
        CliError::Artifact(e.to_string())
    }

    pub(crate) fn output(e: impl std::fmt::Display) -> Self {
        CliError::Output(e.to_string())
    }
}
