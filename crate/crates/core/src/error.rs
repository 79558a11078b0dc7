use thiserror::Error;

use crate::params::State;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DiracError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The adaptive integrator could not continue. Carries the last accepted sample.
    #[error("integration failed at r = {r}: {reason}")]
    Integration { r: f64, state: Vec<f64>, reason: String },

    #[error("no node found before lambda = {max_lambda}")]
    BracketFailure { max_lambda: f64 },
}

impl DiracError {
    pub fn domain(msg: impl Into<String>) -> Self {
        DiracError::Domain(msg.into())
    }

    /// Last good radial state for two-dimensional integrations.
    pub fn last_state(&self) -> Option<State> {
        match self {
            DiracError::Integration { state, .. } if state.len() >= 2 => Some(State::new(state[0], state[1])),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, DiracError>;
