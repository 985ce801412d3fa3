use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (for example a
    /// correlation matrix that is not positive semi-definite).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid of {requested} points exceeds the budget of {budget}")]
    Capacity { requested: f64, budget: usize },

    #[error("integrand returned {value} at point {point:?}")]
    NonFinite { point: Vec<f64>, value: f64 },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("root bracketing failed for {what}: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    Bracket {
        what: String,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("{what} did not converge after {iterations} iterations (last change {last_change:e})")]
    Convergence {
        what: String,
        iterations: usize,
        last_change: f64,
    },

    #[error("sizing error: {0}")]
    Sizing(String),
}
