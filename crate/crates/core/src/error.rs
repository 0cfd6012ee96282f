use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum IldlError {
    #[error("row {row} sums to {sum}, expected 1")]
    RowSumViolation { row: usize, sum: f64 },

    #[error("entry ({row}, {col}) is negative: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),

    #[error("singular value decomposition did not converge")]
    SvdFailure,

    #[error("linear system could not be solved: {0}")]
    SingularSystem(&'static str),

    #[error("kernel bandwidth must be positive, got {0}")]
    BandwidthNonPositive(f64),

    #[error("sparsity patterns differ")]
    PatternMismatch,

    #[error("non-finite solver state at iteration {iter}: {what}")]
    NonFiniteState { iter: usize, what: String },

    #[error("degenerate interval [{lo}, {hi}]")]
    DegenerateInterval { lo: f64, hi: f64 },

    #[error("rejection sampler exhausted after {0} attempts")]
    RejectionExhausted(usize),

    #[error("invalid noise configuration: {0}")]
    InvalidNoiseConfig(String),

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("non-finite score at ({row}, {col})")]
    NonFiniteScore { row: usize, col: usize },

    #[error("need at least {needed} {what}, got {got}")]
    InsufficientData { what: &'static str, needed: usize, got: usize },

    #[error("unsupported significance level {0}; use 0.05 or 0.1")]
    UnsupportedAlpha(f64),

    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error("checksum mismatch for {name}: manifest {expected:016x}, files {actual:016x}")]
    ChecksumMismatch { name: String, expected: u64, actual: u64 },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IldlError> = std::result::Result<T, E>;
