use thiserror::Error;

pub type Result<T> = std::result::Result<T, DcmError>;

#[derive(Debug, Error)]
pub enum DcmError {
    #[error("dimension mismatch in {context}")]
    Dimension { context: String },

    #[error("degenerate trace: |Tr C| = {trace_abs:e} below threshold {threshold:e}")]
    DegenerateTrace { trace_abs: f64, threshold: f64 },

    #[error("indefinite covariance in {block}: eigenvalue {min_eigenvalue:e} < -{tolerance:e}")]
    IndefiniteCovariance {
        block: String,
        min_eigenvalue: f64,
        tolerance: f64,
    },

    #[error("numerical blowup at t = {t} (trajectory {trajectory}, step {step})")]
    NumericalBlowup { t: f64, trajectory: u64, step: usize },

    #[error("norm collapse on subsystem {subsystem} at t = {t} (trajectory {trajectory}): |.|^2 = {norm_sq:e} < {floor:e}")]
    NormCollapse {
        subsystem: char,
        norm_sq: f64,
        floor: f64,
        t: f64,
        trajectory: u64,
    },

    #[error("window underflow at tau = {tau}: {samples} samples in window of length {delta}")]
    WindowUnderflow { tau: f64, delta: f64, samples: usize },

    #[error("cannot merge estimates at tau = {left} and tau = {right}")]
    TauMismatch { left: f64, right: f64 },

    #[error("step size {requested:e} exceeds stability guard {limit:e}")]
    StepGuard { requested: f64, limit: f64 },

    #[error("inconclusive sweep: {resolved} of {total} points statistically resolved, need at least 2; increase the ensemble size")]
    InconclusiveSweep { resolved: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl DcmError {
    pub(crate) fn dim(context: impl Into<String>) -> Self {
        DcmError::Dimension {
            context: context.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DcmError::Config(msg.into())
    }
}
