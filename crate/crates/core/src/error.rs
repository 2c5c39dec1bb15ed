use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite energy encountered at iteration {iteration} (delta = {delta})")]
    NonFiniteEnergy { iteration: usize, delta: f64 },
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("oracle instance too large: {0}")]
    InstanceTooLarge(String),
    #[error("oracle methods disagree: {0}")]
    OracleDisagreement(String),
}

pub type Result<T> = std::result::Result<T, Error>;
