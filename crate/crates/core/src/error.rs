use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({0}, {1}) lies outside the domain")]
    OutOfDomain(f64, f64),
    #[error("wave speed must be positive and finite, got {0}")]
    NonPositiveSpeed(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid array geometry: {0}")]
    InvalidArray(String),
    #[error("time step {dt} violates the CFL bound {limit}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("solution became unstable at step {0}")]
    InstabilityDetected(usize),
    #[error("signal under-sampled: {0:.2} samples per central period (need at least 10)")]
    UnderSampled(f64),
    #[error("record too short: need {needed} samples, have {available}")]
    RecordTooShort { needed: usize, available: usize },
    #[error("traces do not cover the convolution support: {0}")]
    InsufficientRecordLength(String),
    #[error("coarse step is not an integer multiple of the fine step (ratio {0})")]
    NonIntegerSubsampling(f64),
    #[error("index {index} outside 1..={max}")]
    IndexRange { index: usize, max: usize },
    #[error("pivot block {block} has eigenvalue {eigenvalue:e}")]
    IndefinitePivot { block: usize, eigenvalue: f64 },
    #[error("operator has {0} unknowns, above the dense limit")]
    GridTooLarge(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("snapshot Gramian lost rank ({rank} of {full})")]
    DegenerateSnapshots { rank: usize, full: usize },
    #[error("normal equations are singular")]
    SingularNormalEquations,
    #[error("field is constant over the region")]
    DegenerateField,
    #[error("traces too short: need {needed} samples, have {available}")]
    InsufficientLength { needed: usize, available: usize },
    #[error("inversion diverged: {0}")]
    Divergence(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::OutOfDomain(..)
            | Error::NonPositiveSpeed(_)
            | Error::InvalidGrid(_)
            | Error::InvalidArray(_)
            | Error::UnderSampled(_)
            | Error::NonIntegerSubsampling(_)
            | Error::IndexRange { .. }
            | Error::DimensionMismatch(_)
            | Error::DegenerateField => 2,
            Error::IndefinitePivot { .. }
            | Error::DegenerateSnapshots { .. }
            | Error::SingularNormalEquations => 4,
            Error::Divergence(_) => 5,
            _ => 3,
        }
    }
}
