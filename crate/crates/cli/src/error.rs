use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] aqgwr::Error),
}

impl CliError {
    /// 1 for configuration or validation errors, 2 for data errors, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        use aqgwr::Error as E;
        match self {
            CliError::Config(_) => 1,
            CliError::Core(E::InvalidInput(_)) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        }
    }
}
