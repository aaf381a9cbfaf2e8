use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("precision entry {index} is not positive ({value})")]
    NotPositive { index: usize, value: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("log-likelihood is not finite ({value}) at theta = {theta:?}")]
    NonFiniteLoglik { theta: Vec<f64>, value: f64 },

    #[error("log-posterior is not finite ({value}) at the initial point")]
    NonFiniteLogPost { value: f64 },

    #[error("need at least {needed} retained samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("series too short: need more than {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}
