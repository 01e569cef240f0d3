use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("kernel width {width} exceeds grid size {n}")]
    KernelTooWide { width: usize, n: usize },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("radius {radius} does not survive time {time} (extinction at {extinction})")]
    Extinction {
        radius: f64,
        time: f64,
        extinction: f64,
    },

    #[error("soft threshold is not monotone: tau_tilde/eps^2 = {ratio} >= 8/9")]
    NotMonotone { ratio: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonNotConverged { iterations: usize, residual: f64 },

    #[error("training did not reach the loss target {target:e} (final held-out loss {final_loss:e})")]
    TrainingNotConverged { final_loss: f64, target: f64 },

    #[error("flow step {step} failed: {source}")]
    FlowStep { step: usize, source: Box<Error> },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
