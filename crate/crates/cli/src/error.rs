use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] tavg_core::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: tavg_core::Error,
    },
}

impl CliError {
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERIC: i32 = 3;

    pub fn core(&self) -> Option<&tavg_core::Error> {
        match self {
            CliError::Usage(_) => None,
            CliError::Core(e) | CliError::Context { source: e, .. } => Some(e),
        }
    }

    /// 1 for usage and configuration errors, 3 for numeric failure, 2 for
    /// every other data error.
    pub fn exit_code(&self) -> i32 {
        match self.core() {
            None | Some(tavg_core::Error::InvalidConfig(_)) => Self::USAGE,
            Some(tavg_core::Error::NonFiniteLoss { .. }) => Self::NUMERIC,
            Some(_) => Self::DATA,
        }
    }
}

pub trait Context<T> {
    fn context(self, f: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for tavg_core::Result<T> {
    fn context(self, f: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Context { context: f(), source })
    }
}
