use thiserror::Error;

pub type Result<T> = std::result::Result<T, VscopeError>;

#[derive(Debug, Error)]
pub enum VscopeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("CFL violation at step {step} (t = {time:.6}): cfl = {cfl:.4} > limit {limit:.4}")]
    CflViolation {
        step: usize,
        time: f64,
        cfl: f64,
        limit: f64,
    },

    #[error("non-finite state at step {step} (t = {time:.6})")]
    NonFiniteState { step: usize, time: f64 },

    #[error("cover infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate cone: {0}")]
    DegenerateCone(String),

    #[error(
        "budget preflight failed: relative residual {residual:.3e} exceeds tolerance {tolerance:.3e}"
    )]
    PreflightBudget { residual: f64, tolerance: f64 },

    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl VscopeError {
    /// Process exit class: 1 for validation/input problems, 2 for numerical
    /// failures detected mid-computation.
    pub fn exit_class(&self) -> i32 {
        match self {
            VscopeError::CflViolation { .. }
            | VscopeError::NonFiniteState { .. }
            | VscopeError::PreflightBudget { .. } => 2,
            _ => 1,
        }
    }
}
