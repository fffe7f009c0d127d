//! Discounted value iteration, relative value iteration for the average-age
//! criterion, greedy policy extraction, exact policy evaluation through the
//! stationary distribution, and an exhaustive oracle for tiny instances.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{is_feasible, Action, State, TruncatedMdp, TruncatedSpace};
use crate::num::Scalar;

/// Largest number of decision states [`brute_force_optimal`] will enumerate.
pub const MAX_ORACLE_DECISION_STATES: usize = 16;

/// Below this many states a sweep runs on the calling thread.
const PAR_THRESHOLD: usize = 4096;

/// What a [`ValueTable`] holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueMode<T> {
    /// Optimal discounted cost with the given discount factor.
    Discounted(T),
    /// Relative values (bias up to an additive constant) of the average-cost problem.
    Relative,
}

/// One real value per state of a truncated space, in enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable<T> {
    space: Arc<TruncatedSpace>,
    values: Vec<T>,
    mode: ValueMode<T>,
}

impl<T: Scalar> ValueTable<T> {
    pub fn new(space: Arc<TruncatedSpace>, values: Vec<T>, mode: ValueMode<T>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::InvalidArgument(format!(
                "value table has {} entries, space has {}",
                values.len(),
                space.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("value table has non-finite entries".into()));
        }
        Ok(ValueTable { space, values, mode })
    }

    pub fn space(&self) -> &TruncatedSpace {
        &self.space
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn mode(&self) -> ValueMode<T> {
        self.mode
    }

    pub fn get(&self, s: &State) -> Option<T> {
        self.space.try_index(s).map(|i| self.values[i])
    }

    /// Value of a state known to be in the space. Panics otherwise.
    pub fn at(&self, s: State) -> T {
        self.get(&s).unwrap_or_else(|| panic!("{s} outside S_{}", self.space.n()))
    }

    fn discount(&self) -> T {
        match self.mode {
            ValueMode::Discounted(alpha) => alpha,
            ValueMode::Relative => T::one(),
        }
    }
}

/// A stationary deterministic policy on a truncated space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    space: Arc<TruncatedSpace>,
    actions: Vec<Action>,
}

impl Policy {
    pub fn new(space: Arc<TruncatedSpace>, actions: Vec<Action>) -> Result<Self> {
        if actions.len() != space.len() {
            return Err(Error::InvalidArgument(format!(
                "policy has {} entries, space has {}",
                actions.len(),
                space.len()
            )));
        }
        for (s, &a) in space.states().iter().zip(&actions) {
            if !is_feasible(s, a) {
                return Err(Error::Infeasible { state: *s, action: a });
            }
        }
        Ok(Policy { space, actions })
    }

    /// Policy choosing `decide(s)` at decision states and the forced action elsewhere.
    pub fn from_decisions(space: Arc<TruncatedSpace>, decide: impl Fn(&State) -> Action) -> Result<Self> {
        let actions = space.states().iter().map(|s| forced_action(s).unwrap_or_else(|| decide(s))).collect();
        Self::new(space, actions)
    }

    pub fn always_preempt(space: Arc<TruncatedSpace>) -> Self {
        Self::from_decisions(space, |_| Action::TransmitNew).expect("feasible")
    }

    pub fn never_preempt(space: Arc<TruncatedSpace>) -> Self {
        Self::from_decisions(space, |_| Action::Retransmit).expect("feasible")
    }

    pub fn space(&self) -> &TruncatedSpace {
        &self.space
    }

    pub fn shared_space(&self) -> Arc<TruncatedSpace> {
        Arc::clone(&self.space)
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn get(&self, s: &State) -> Option<Action> {
        self.space.try_index(s).map(|i| self.actions[i])
    }

    /// Action at a state known to be in the space. Panics otherwise.
    pub fn at(&self, s: State) -> Action {
        self.get(&s).unwrap_or_else(|| panic!("{s} outside S_{}", self.space.n()))
    }
}

/// The only feasible action of a non-decision state.
pub fn forced_action(s: &State) -> Option<Action> {
    match crate::model::feasible_actions(s) {
        [a] => Some(*a),
        _ => None,
    }
}

/// Outcome of [`rvia`].
#[derive(Debug, Clone)]
pub struct SolveResult<T> {
    /// Optimal long-run average age.
    pub gain: T,
    pub values: ValueTable<T>,
    pub policy: Policy,
    pub iterations: usize,
    /// Span of the last value change.
    pub residual: T,
}

/// Outcome of [`evaluate_policy_exact`].
#[derive(Debug, Clone)]
pub struct EvalResult<T> {
    pub gain: T,
    pub stationary: Vec<T>,
    pub sweeps: usize,
    space: Arc<TruncatedSpace>,
}

impl<T: Scalar> EvalResult<T> {
    pub fn probability(&self, s: &State) -> Option<T> {
        self.space.try_index(s).map(|i| self.stationary[i])
    }

    /// Mean recurrence time of `s` in the induced chain, `1 / pi(s)`.
    /// `None` for states outside the space or off the recurrent class.
    pub fn mean_return_time(&self, s: &State) -> Option<T> {
        self.probability(s).filter(|&pi| pi > T::zero()).map(|pi| pi.recip())
    }
}

/// Stopping rule and sweep cap of the stationary-distribution iteration.
#[derive(Debug, Clone, Copy)]
pub struct StationaryOptions<T> {
    pub tol: T,
    pub max_sweeps: usize,
}

impl<T: Scalar> Default for StationaryOptions<T> {
    fn default() -> Self {
        StationaryOptions { tol: T::of(1e-12), max_sweeps: 10_000_000 }
    }
}

/// One application of the Bellman operator
/// `(T v)(s) = min_a { c(s, a) + discount * sum_s' P_a(s, s'; N) v(s') }`.
pub fn bellman_sweep<T: Scalar>(mdp: &TruncatedMdp<T>, values: &[T], discount: T) -> Vec<T> {
    let mut out = vec![T::zero(); mdp.len()];
    sweep_into(mdp, values, discount, &mut out);
    out
}

fn sweep_into<T: Scalar>(mdp: &TruncatedMdp<T>, values: &[T], discount: T, out: &mut [T]) {
    if out.len() >= PAR_THRESHOLD {
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = mdp.best(i, values, discount).1);
    } else {
        for (i, o) in out.iter_mut().enumerate() {
            *o = mdp.best(i, values, discount).1;
        }
    }
}

fn check_tol<T: Scalar>(tol: T) -> Result<()> {
    if tol > T::zero() && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")))
    }
}

/// Discounted value iteration from the all-zero table.
///
/// Stops at the first iterate whose sup-norm change is at most `tol`.
pub fn discounted_vi<T: Scalar>(mdp: &TruncatedMdp<T>, alpha: T, tol: T, max_iter: usize) -> Result<ValueTable<T>> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    check_tol(tol)?;
    let mut values = vec![T::zero(); mdp.len()];
    let mut next = values.clone();
    let mut residual = T::infinity();
    for _ in 0..max_iter {
        sweep_into(mdp, &values, alpha, &mut next);
        residual = values.iter().zip(&next).map(|(&a, &b)| (b - a).abs()).fold(T::zero(), T::max);
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            return ValueTable::new(mdp.shared_space(), values, ValueMode::Discounted(alpha));
        }
    }
    Err(Error::NotConverged { iterations: max_iter, residual: residual.as_f64() })
}

/// Relative value iteration for the average-age criterion, relativized at
/// the reference state `(1, 1, 1)`:
///
/// `V_n(s) = min_a { c(s, a) + sum_s' P_a(s, s'; N) V_{n-1}(s') } - V_{n-1}((1,1,1))`.
///
/// Starts from zero and stops when the span of `V_n - V_{n-1}` is at most
/// `tol`. The gain is `V_n((1,1,1))`, the Bellman increment at the
/// reference state; it lies within `residual` of the true optimal gain.
pub fn rvia<T: Scalar>(mdp: &TruncatedMdp<T>, tol: T, max_iter: usize) -> Result<SolveResult<T>> {
    check_tol(tol)?;
    let reference = mdp.space().reference_index();
    let mut values = vec![T::zero(); mdp.len()];
    let mut next = values.clone();
    let mut span = T::infinity();
    for iter in 1..=max_iter {
        sweep_into(mdp, &values, T::one(), &mut next);
        let offset = values[reference];
        let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
        for (n, &v) in next.iter_mut().zip(&values) {
            *n -= offset;
            let d = *n - v;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        span = hi - lo;
        std::mem::swap(&mut values, &mut next);
        if span <= tol {
            let gain = values[reference];
            let table = ValueTable::new(mdp.shared_space(), values, ValueMode::Relative)?;
            let policy = greedy_policy(mdp, &table);
            return Ok(SolveResult { gain, values: table, policy, iterations: iter, residual: span });
        }
    }
    Err(Error::NotConverged { iterations: max_iter, residual: span.as_f64() })
}

/// Greedy policy with respect to `values`. Discounted tables use their own
/// discount factor in the lookahead; exact ties go to the lower action number.
pub fn greedy_policy<T: Scalar>(mdp: &TruncatedMdp<T>, values: &ValueTable<T>) -> Policy {
    assert_eq!(values.space(), mdp.space(), "value table defined on a different space");
    let discount = values.discount();
    let vals = values.values();
    let actions = (0..mdp.len()).map(|i| mdp.best(i, vals, discount).0).collect();
    Policy::new(mdp.shared_space(), actions).expect("greedy actions are feasible")
}

/// Long-run average age of `policy` on the truncated model, via the
/// stationary distribution of the induced chain.
pub fn evaluate_policy_exact<T: Scalar>(mdp: &TruncatedMdp<T>, policy: &Policy) -> Result<EvalResult<T>> {
    evaluate_policy_with(mdp, policy, StationaryOptions::default())
}

pub fn evaluate_policy_with<T: Scalar>(
    mdp: &TruncatedMdp<T>,
    policy: &Policy,
    opts: StationaryOptions<T>,
) -> Result<EvalResult<T>> {
    if policy.space() != mdp.space() {
        return Err(Error::InvalidArgument("policy defined on a different space".into()));
    }
    let n = mdp.len();
    // incoming edges of the induced chain, grouped by target
    let mut edges: Vec<(u32, u32, T)> = Vec::with_capacity(n * 4);
    let mut costs = Vec::with_capacity(n);
    for (i, &a) in policy.actions().iter().enumerate() {
        let choice = mdp.choice(i, a).expect("policy actions are feasible");
        costs.push(choice.cost);
        edges.extend(mdp.successors(choice).map(|(j, w)| (j as u32, i as u32, w)));
    }
    edges.sort_by_key(|&(j, i, _)| (j, i));
    let mut start = vec![0usize; n + 1];
    for &(j, _, _) in &edges {
        start[j as usize + 1] += 1;
    }
    for k in 0..n {
        start[k + 1] += start[k];
    }

    let mut pi = vec![T::one() / T::of(n as f64); n];
    let mut next = vec![T::zero(); n];
    let pull =
        |pi: &[T], j: usize| -> T { edges[start[j]..start[j + 1]].iter().map(|&(_, i, w)| pi[i as usize] * w).sum() };
    let mut change = T::infinity();
    for sweep in 1..=opts.max_sweeps {
        if n >= PAR_THRESHOLD {
            next.par_iter_mut().enumerate().for_each(|(j, o)| *o = pull(&pi, j));
        } else {
            for (j, o) in next.iter_mut().enumerate() {
                *o = pull(&pi, j);
            }
        }
        let total: T = next.iter().copied().sum();
        change = T::zero();
        for (o, &old) in next.iter_mut().zip(&pi) {
            *o /= total;
            change += (*o - old).abs();
        }
        std::mem::swap(&mut pi, &mut next);
        if change <= opts.tol {
            let gain = pi.iter().zip(&costs).map(|(&w, &c)| w * c).sum();
            return Ok(EvalResult { gain, stationary: pi, sweeps: sweep, space: mdp.shared_space() });
        }
    }
    Err(Error::NotConverged { iterations: opts.max_sweeps, residual: change.as_f64() })
}

/// Exhaustive search over every stationary deterministic policy.
///
/// Returns the minimum exact gain and the first minimizing policy in
/// enumeration order (bit `k` set means preempt at the `k`-th decision state).
/// Refuses spaces with more than [`MAX_ORACLE_DECISION_STATES`] decision states.
pub fn brute_force_optimal<T: Scalar>(mdp: &TruncatedMdp<T>) -> Result<(T, Policy)> {
    let decisions: Vec<usize> = mdp.space().decision_indices().collect();
    if decisions.len() > MAX_ORACLE_DECISION_STATES {
        return Err(Error::TooLarge(format!(
            "{} decision states (N = {}); the oracle enumerates at most {}",
            decisions.len(),
            mdp.space().n(),
            MAX_ORACLE_DECISION_STATES
        )));
    }
    let base = Policy::never_preempt(mdp.shared_space());
    let evaluate = |mask: u32| -> Result<(T, Policy)> {
        let mut actions = base.actions().to_vec();
        for (bit, &i) in decisions.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                actions[i] = Action::TransmitNew;
            }
        }
        let policy = Policy::new(mdp.shared_space(), actions)?;
        let gain = evaluate_policy_exact(mdp, &policy)?.gain;
        Ok((gain, policy))
    };
    let results: Vec<(T, Policy)> =
        (0..1u32 << decisions.len()).into_par_iter().map(evaluate).collect::<Result<_>>()?;
    let mut best: Option<(T, Policy)> = None;
    for (gain, policy) in results {
        if best.as_ref().is_none_or(|(g, _)| gain < *g) {
            best = Some((gain, policy));
        }
    }
    Ok(best.expect("at least one policy"))
}

/// Number of policies [`brute_force_optimal`] would enumerate on `space`.
pub fn oracle_policy_count(space: &TruncatedSpace) -> u64 {
    1u64 << space.decision_indices().count().min(63)
}

/// Start of the region `v1 >= q2 v2 / (q2 - q1)` in which re-transmission
/// is expected to be upward-closed in `v1`. `None` when `q1 == q2`.
pub fn threshold_start<T: Scalar>(q1: T, q2: T, v2: u32) -> Option<T> {
    (q2 > q1).then(|| q2 * T::of_age(v2) / (q2 - q1))
}

/// Re-transmission set of one `v2` column of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRow<T> {
    pub v2: u32,
    /// Ascending `v1` values with action 0 at `(v1, v2, 1)`.
    pub retransmit_v1: Vec<u32>,
    pub threshold: Option<T>,
    /// Whether the action-0 set restricted to `v1 >= threshold` is upward-closed;
    /// `None` when the threshold is undefined.
    pub upward_closed: Option<bool>,
}

/// Per-`v2` summary of where `policy` re-transmits at decision states.
pub fn threshold_summary<T: Scalar>(policy: &Policy, q1: T, q2: T) -> Vec<ThresholdRow<T>> {
    let n = policy.space().n();
    (1..=n)
        .map(|v2| {
            let retransmit_v1: Vec<u32> =
                (v2..=n).filter(|&v1| policy.at(State::queued(v1, v2, true)) == Action::Retransmit).collect();
            let threshold = threshold_start(q1, q2, v2);
            let upward_closed = threshold.map(|thr| {
                let mut seen = false;
                (v2..=n).filter(|&v1| T::of_age(v1) >= thr).all(|v1| {
                    let r = retransmit_v1.binary_search(&v1).is_ok();
                    let ok = r || !seen;
                    seen |= r;
                    ok
                })
            });
            ThresholdRow { v2, retransmit_v1, threshold, upward_closed }
        })
        .collect()
}
