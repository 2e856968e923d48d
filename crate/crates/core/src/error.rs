use thiserror::Error;

/// Errors raised by the prediction and allocation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("series too short: need at least {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("split leaves an empty side ({train} train / {test} test)")]
    EmptySplit { train: usize, test: usize },

    #[error("feature {feature} is constant on the training data; cannot scale")]
    DegenerateFeature { feature: usize },

    #[error("actual value at index {index} is zero; MAPE is undefined")]
    ZeroActual { index: usize },

    #[error("noise power must be positive, got {0}")]
    NonPositiveNoise(f64),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("infeasible allocation: predicted SINR {0} gives zero capacity")]
    InfeasibleAllocation(f64),

    #[error("training diverged: non-finite SSE at epoch {epoch}")]
    NonFiniteSse { epoch: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
