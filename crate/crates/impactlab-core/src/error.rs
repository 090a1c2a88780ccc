//! Error type shared by all numerical modules.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("price {x} escaped the working domain [{lo}, {hi}] during {context}")]
    DomainEscape {
        x: f64,
        lo: f64,
        hi: f64,
        context: &'static str,
    },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("terminal fixed point failed to converge at {} price node(s): {nodes:?}", nodes.len())]
    TerminalFixedPoint { nodes: Vec<usize> },

    #[error("Picard iteration failed at time step {time_index} (residual {residual:.3e} after {iterations} iterations)")]
    PicardFailure {
        time_index: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("scheme stability violated: {0}")]
    StabilityViolation(String),

    #[error("model assumption violated: {0}")]
    ModelAssumption(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
