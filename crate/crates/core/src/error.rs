use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsgdError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("invalid parameter constants: {0}")]
    InvalidConstants(String),
    #[error("invalid step-size parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tail start t = {t} must be smaller than n = {n}")]
    InvalidHorizon { t: usize, n: usize },
    #[error("unstable SGD step size: step * R^2 = {0} must lie in (0, 1)")]
    UnstableStep(f64),
    #[error("dimension {d} exceeds the operator engine limit {limit}")]
    DimensionTooLarge { d: usize, limit: usize },
    #[error("{what} is not contractive (spectral radius {radius})")]
    NonContractive { what: &'static str, radius: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("insufficient Monte-Carlo runs: {runs} < {required}")]
    InsufficientRuns { runs: usize, required: usize },
}

pub type Result<T> = std::result::Result<T, AsgdError>;
