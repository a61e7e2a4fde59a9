use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported dimension {0}; expected 2 or 3")]
    InvalidDimension(usize),

    #[error("resolution {got} below minimum {min} for dimension {dim}")]
    ResolutionTooSmall { dim: usize, got: usize, min: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("support value h[{index}] = {value} is not positive")]
    NonPositiveSupport { index: usize, value: f64 },

    #[error("normals do not positively span; the Wulff body is unbounded")]
    Unbounded,

    #[error("point is not interior to the body (margin {margin:e})")]
    NotInterior { margin: f64 },

    #[error("p = {p} out of (-n, 0) for n = {n}")]
    ExponentOutOfRange { p: f64, n: usize },

    #[error("invalid Orlicz data: {0}")]
    InvalidOrlicz(String),

    #[error("psi(t)/t^(p-1) appears unbounded as t -> 0+")]
    UnboundedNearZero,

    #[error("epsilon {eps} must lie in (0, delta = {delta})")]
    EpsilonOutOfRange { eps: f64, delta: f64 },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("center solver did not converge in {iterations} iterations (gradient norm {gradient_norm:e})")]
    CenterNotConverged {
        iterations: usize,
        gradient_norm: f64,
        trace: Vec<f64>,
    },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("operation requires a power-type Orlicz function")]
    NotPowerType,
}

pub type Result<T> = std::result::Result<T, Error>;
