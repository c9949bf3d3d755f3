use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    /// The row tail bound never certified that the remaining mass cannot
    /// contain the mark (or that a series has converged) within the budget.
    #[error("tail of row {regime} unresolved after {terms} terms")]
    TailUnresolvable { regime: usize, terms: usize },

    /// A state coordinate became NaN or infinite during integration.
    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },

    /// Argument outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or unsatisfiable simulation configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A requested time is not a node of the Brownian grid.
    #[error("time {time} is not a grid node")]
    GridMismatch { time: f64 },

    /// Too much simulated probability mass escaped the truncated regime space.
    #[error("simulated mass {mass:.3e} above regime {cutoff} exceeds 1e-3")]
    TruncationLeak { mass: f64, cutoff: usize },
}
