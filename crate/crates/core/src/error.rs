//! Error types shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    /// Truncated Fock space is too small for the requested object, or a
    /// computed result carries non-negligible weight at the truncation edge.
    #[error("truncation error: {0}")]
    Truncation(String),

    /// Matrix dimensions do not match.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An integrator step size violates its stability/accuracy precondition.
    #[error("step size error: {0}")]
    StepSize(String),

    /// Matrix-exponential argument exceeds the configured norm bound.
    #[error("overflow error: ||A t||_1 = {norm:.3e} exceeds bound {bound:.3e}")]
    Overflow { norm: f64, bound: f64 },

    /// A parameter lies outside the domain of the requested formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A conditional-state weight underflowed to an unusable value.
    #[error("zero probability: weight {0:.3e} below underflow threshold")]
    ZeroProbability(f64),

    /// Requested quadrature cost exceeds the configured budget.
    #[error("cost error: {0}")]
    Cost(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
