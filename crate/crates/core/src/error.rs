use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("transport problem too large: {atoms} atoms on one side exceeds the limit of {limit}; subsample first")]
    TooManyAtoms { atoms: usize, limit: usize },

    #[error("transport problem infeasible or unbounded: {0}")]
    Transport(String),

    #[error("test function violates the Lipschitz-1 bound under the truncated metric: {0}")]
    NotLipschitz(String),

    #[error("deterministic rounding needs an integer mass, got {0}")]
    NonIntegerMass(f64),

    #[error("time {0} is not on the grid")]
    OffGrid(f64),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("measure flow does not cover the simulation grid: {0}")]
    FlowCoverage(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("coefficient out of range: {0}")]
    OutOfRange(String),

    #[error("Riccati system blew up: {0}")]
    BlowUp(String),

    #[error("unstable scheme: {0}")]
    Unstable(String),

    #[error("too few samples: need at least {min}, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
