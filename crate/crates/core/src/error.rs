use thiserror::Error;

/// Errors produced by model validation, analytic computations, and simulation.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Structurally invalid model parameters (non-positive decay rate,
    /// negative arrival rate, malformed mark distribution, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation that requires the stability condition was asked to run
    /// on a model whose excitation matrix has spectral radius >= 1 (or so
    /// close to 1 that the stationary quantities are numerically divergent).
    #[error("non-stationary model: spectral radius {radius} (must be < 1)")]
    NonStationary { radius: f64 },

    /// An iterative or adaptive procedure failed to reach its tolerance
    /// within the configured budget.
    #[error("convergence failure: {0}")]
    Convergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
