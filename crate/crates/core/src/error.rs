use thiserror::Error;

pub type Result<T, E = DashError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DashError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("infeasible constants: {0}")]
    Infeasible(String),

    #[error("batch size {n_t} at selection step {t} exceeds the cap of {cap}")]
    CapExceeded { t: usize, n_t: u64, cap: u64 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DashError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        DashError::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DashError::InvalidConfig(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        DashError::Format {
            what,
            detail: detail.into(),
        }
    }
}
