//! Optimal re-transmit-or-preempt scheduling for age of information.
//!
//! A base station sends status updates over an erasure channel whose
//! re-transmissions succeed more often than first transmissions
//! (`q2 >= q1`). When a fresh packet arrives while an older one is still
//! undelivered, the station either re-transmits the old packet or preempts
//! it. This crate builds the resulting Markov decision process and its
//! truncations ([`model`]), solves it ([`solver`]), checks the structure of
//! the solution ([`structure`]) and simulates the link ([`sim`]).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix it to `f64`, which the tolerances in this crate
//! are tuned for.

pub mod error;
pub mod model;
pub mod num;
pub mod sim;
pub mod solver;
pub mod structure;

pub use error::{Error, Result};
pub use model::{
    cost, feasible_actions, transitions, transitions_truncated, Action, Age, Params, State, TransitionDist,
    TruncatedMdp, TruncatedSpace,
};
pub use num::Scalar;
pub use sim::{
    make_baseline, simulate, simulate_drop_baseline, step, BaselineKind, BaselineRule, DecisionRule, ExtendedPolicy,
    SimOptions, TrajectoryStats,
};
pub use solver::{
    brute_force_optimal, discounted_vi, evaluate_policy_exact, greedy_policy, rvia, threshold_summary, EvalResult,
    Policy, SolveResult, ValueMode, ValueTable,
};
pub use structure::{CheckStatus, StructureReport, Violation};

pub type Params64 = Params<f64>;
pub type Params32 = Params<f32>;
pub type Mdp64 = TruncatedMdp<f64>;
pub type Mdp32 = TruncatedMdp<f32>;
pub type ValueTable64 = ValueTable<f64>;
pub type SolveResult64 = SolveResult<f64>;
pub type EvalResult64 = EvalResult<f64>;
pub type TransitionDist64 = TransitionDist<f64>;
