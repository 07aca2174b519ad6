use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("all fits failed: {0}")]
    AllFitsFailed(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::AllFitsFailed(_) => 4,
            CliError::Output(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn output_err(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}
