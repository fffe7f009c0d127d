use thiserror::Error;

use crate::model::{Action, State};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("action {action} is not feasible in state {state}")]
    Infeasible { state: State, action: Action },

    #[error("state {state} is outside the truncated space with N = {n}")]
    OutOfSpace { state: State, n: u32 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("policy has no action for reached state {0}")]
    PolicyUndefined(State),
}

pub type Result<T> = std::result::Result<T, Error>;
