use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("structural error at row {row}: {message}")]
    Structure { row: usize, message: String },

    #[error("dates not strictly increasing at row {row}: {previous} then {current}")]
    Ordering {
        row: usize,
        previous: String,
        current: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("insufficient data: need at least {required}, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("frontier level {level} failed: {message}")]
    FrontierLevel { level: usize, message: String },

    #[error("random portfolio sampler rejected too many draws ({accepted} of {requested} accepted after {attempts} attempts)")]
    SamplerExhausted {
        requested: usize,
        accepted: usize,
        attempts: usize,
    },

    #[error("ex-post simulation draw {draw} failed: {message}")]
    Draw { draw: usize, message: String },

    #[error("missing calibration: {0}")]
    MissingCalibration(String),

    #[error("rank-deficient active constraint matrix")]
    RankDeficient,

    #[error("risk appetite cannot be recovered: flat frontier segment")]
    ThetaUnrecoverable,
}

pub type Result<T> = std::result::Result<T, Error>;
