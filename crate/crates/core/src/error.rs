use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HerdError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },

    /// The entropy structure needs δ ∈ (−κ/γ, 0) ∪ (0, ∞).
    #[error("delta = {delta} is not admissible for the entropy structure (need δ≠0 and δ > {delta_star})")]
    InadmissibleDelta { delta: f64, delta_star: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("entropy undefined: u1[{index}] = {value} is not strictly inside (0, 1)")]
    EntropyUndefined { index: usize, value: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e}); {hint}")]
    NewtonDiverged {
        iterations: usize,
        residual: f64,
        hint: &'static str,
    },

    #[error("singular matrix encountered (pivot {pivot} at column {column})")]
    Singular { column: usize, pivot: f64 },

    #[error("no decay measurable: relative entropy below {floor:e} everywhere")]
    NoDecayMeasurable { floor: f64 },

    #[error("not enough samples: need {needed}, have {have}")]
    NotEnoughSamples { needed: usize, have: usize },

    #[error("continuation failed: {0}")]
    Continuation(String),
}

pub type Result<T> = std::result::Result<T, HerdError>;
