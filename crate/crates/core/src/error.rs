use alloc::string::String;

/// Errors raised by the control library.
///
/// Solver outcomes such as infeasibility or iteration limits are not errors;
/// they are reported through [`crate::qp::QpStatus`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("cost matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("cost matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("invalid bounds on row {row}: lower {lower} > upper {upper}")]
    InvalidBounds { row: usize, lower: f64, upper: f64 },

    #[error("brute-force oracle limited to {max} inequality rows, got {rows}")]
    OracleTooLarge { rows: usize, max: usize },

    #[error("channel {channel} has zero variance")]
    ZeroVariance { channel: String },

    #[error("sequence too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("trajectory data are inconsistent with the window (residual {residual:e})")]
    InconsistentTrajectory { residual: f64 },

    #[error("regression is rank deficient (rank {rank} < {required}); use richer excitation or a smaller lifted dimension")]
    RankDeficient { rank: usize, required: usize },

    #[error("innovation covariance is numerically singular; check the measurement covariance")]
    SingularInnovation,

    #[error("non-finite plant state")]
    NonFinite,

    #[error("steady state not reached after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("controllers do not share the same tuning: {0}")]
    DivergentTuning(String),

    #[error("measurement window holds {have} of {need} samples")]
    WindowNotInitialized { have: usize, need: usize },

    #[error("reference trajectory is empty")]
    EmptyReference,

    #[error("run log is empty")]
    EmptyLog,

    #[error("channel index {index} out of range (have {count})")]
    ChannelOutOfRange { index: usize, count: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
