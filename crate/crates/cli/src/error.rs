use std::path::PathBuf;

use dash_core::DashError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] DashError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 divergence, 4 infeasible constants, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                DashError::InvalidConfig(_)
                | DashError::InvalidInput(_)
                | DashError::Format { .. }
                | DashError::CapExceeded { .. } => 2,
                DashError::Divergence { .. } => 3,
                DashError::Infeasible(_) => 4,
                DashError::Io(_) => 1,
            },
        }
    }
}
