use thiserror::Error;

/// Error type shared by all solver modules.
#[derive(Debug, Error)]
pub enum FglError {
    /// A model or discretization parameter is outside its admissible domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Matrix dimensions do not line up.
    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    ShapeMismatch {
        expected: String,
        actual: String,
        context: &'static str,
    },

    /// The requested operation exceeds a configured capability limit
    /// (e.g. dense exponential above the dense size limit).
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// Krylov iteration did not reach the requested tolerance.
    #[error("Krylov iteration did not converge within {m_max} steps (residual estimate {residual:.3e}, tol {tol:.3e})")]
    KrylovNoConvergence {
        m_max: usize,
        residual: f64,
        tol: f64,
    },

    /// A flow produced a non-finite entry; carries the step at which the
    /// integration was aborted.
    #[error("non-finite value detected at step {step}: {context}")]
    NonFinite { step: usize, context: &'static str },

    /// The closed-form nonlinear flow hit a nonpositive denominator; this
    /// cannot happen for admissible parameters and indicates a numerical
    /// pathology in the input field.
    #[error("nonlinear flow denominator nonpositive ({value:.3e}); input field is pathological")]
    NonlinearDegenerate { value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FglError>;
