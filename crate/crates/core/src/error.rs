use thiserror::Error;

/// Errors produced by the chain model, solvers and experiments.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("clock index {index} out of range for {n_cells} cells")]
    ClockOutOfRange { index: usize, n_cells: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("non-positive energy {value:e} in cell {cell} at t = {time}")]
    NonPositive { cell: usize, value: f64, time: f64 },

    #[error("matrix is not Hurwitz (max real part of spectrum = {max_real})")]
    NotHurwitz { max_real: f64 },

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("time grid does not cover [0, {t_end}]: {detail}")]
    GridMismatch { t_end: f64, detail: String },

    #[error("positivity guard exhausted: {clamps} clamps in {steps} steps")]
    PositivityGuard { clamps: usize, steps: usize },

    #[error("conductivity undefined for T_L = T_R")]
    ZeroGradient,

    #[error("rate function is capped at ({e1}, {e2}); gamma undefined")]
    CappedRegion { e1: f64, e2: f64 },
}

pub type Result<T> = std::result::Result<T, ChainError>;

pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> ChainError {
    ChainError::Domain {
        op,
        detail: detail.into(),
    }
}
