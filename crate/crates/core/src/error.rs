use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("MDP has no unique optimal policy (tie at state {state})")]
    NonUniqueOptimum { state: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("no uniquely-optimal MDP drawn after {0} attempts")]
    RetryCapExceeded(usize),

    #[error("alternative search found no feasible witness for pair ({s}, {a})")]
    NoWitness { s: usize, a: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
