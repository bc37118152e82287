use thiserror::Error;

/// Errors raised by the simulator and its post-processing pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),

    #[error("trace is {0}, expected 1")]
    InvalidTrace(f64),

    #[error("operator is not positive semidefinite (minimum eigenvalue {0:.3e})")]
    NotPositive(f64),

    #[error("state vector norm is {0}, expected 1")]
    NotNormalized(f64),

    #[error("eigenvalue iteration did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("invalid subsystem selection: {0}")]
    Subsystem(String),

    #[error("Kraus operators are not trace preserving (completeness defect {0:.3e})")]
    NotTracePreserving(f64),

    #[error("invalid measurement family `{name}`: {reason}")]
    InvalidMeasurement { name: String, reason: String },

    #[error("parameter `{name}` = {value} outside [{min}, {max}]")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("unknown noise model `{0}`")]
    UnknownModel(String),

    #[error("missing parameter `{param}` for model `{model}`")]
    MissingParameter { model: String, param: &'static str },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable sets overlap on `{0}`")]
    OverlappingVariables(String),

    #[error("empty variable set")]
    EmptyVariables,

    #[error("invalid rank {0}; expected 1, 2 or 4")]
    InvalidRank(usize),

    #[error("negative slack parameter {name} = {value}")]
    NegativeDelta { name: &'static str, value: f64 },

    #[error("bit string has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("requested output length {requested} exceeds input length {available}")]
    OutputTooLong { requested: usize, available: usize },

    #[error("session has no {0} runs")]
    MissingRuns(&'static str),

    #[error("session aborted: estimated key rate is negative")]
    Aborted,

    #[error("reconciliation with {pair} failed on {failed} of {total} blocks")]
    DecodeFailure {
        pair: &'static str,
        failed: usize,
        total: usize,
    },

    #[error("malformed session record on line {line}: {reason}")]
    Record { line: usize, reason: String },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
