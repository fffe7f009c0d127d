//! Slot-level Monte Carlo simulation of the base station / user link.
//!
//! Every slot consumes exactly two uniform draws from a ChaCha8 stream seeded
//! with the run's seed: the channel draw first, the arrival draw second. The
//! draws are taken whether or not the action uses them, so a trajectory is
//! a pure function of `(rule, params, horizon, seed, init)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{is_feasible, Action, Age, Params, State};
use crate::num::Scalar;
use crate::solver::{forced_action, Policy};

/// Shortest horizon [`simulate`] accepts.
pub const MIN_HORIZON: u64 = 10_000;

/// Shortest horizon [`simulate_drop_baseline`] accepts.
pub const MIN_DROP_HORIZON: u64 = 1_000_000;

/// Number of batches used for the batch-means confidence interval.
pub const BATCHES: usize = 30;

/// A stationary decision rule: maps a state to an action, or `None` where
/// the rule is undefined.
pub trait DecisionRule {
    fn decide(&self, s: &State) -> Option<Action>;

    fn name(&self) -> String;
}

impl DecisionRule for Policy {
    fn decide(&self, s: &State) -> Option<Action> {
        self.get(s)
    }

    fn name(&self) -> String {
        format!("table_N{}", self.space().n())
    }
}

/// Comparison policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    /// Transmit every fresh packet, discarding the queued one.
    AlwaysPreempt,
    /// Keep re-transmitting the queued packet until it is delivered.
    NeverPreempt,
    /// Re-transmit iff `v1 >= theta * v2`.
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineRule {
    kind: BaselineKind,
}

impl BaselineRule {
    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    /// Action at a decision state `(v1, v2, 1)`.
    fn decision(&self, v1: u32, v2: u32) -> Action {
        match self.kind {
            BaselineKind::AlwaysPreempt => Action::TransmitNew,
            BaselineKind::NeverPreempt => Action::Retransmit,
            BaselineKind::Threshold(theta) => {
                if f64::from(v1) >= theta * f64::from(v2) {
                    Action::Retransmit
                } else {
                    Action::TransmitNew
                }
            }
        }
    }

    /// The rule restricted to a truncated space.
    pub fn to_policy(&self, space: std::sync::Arc<crate::model::TruncatedSpace>) -> Policy {
        Policy::from_decisions(space, |s| self.decide(s).expect("baselines are total")).expect("feasible")
    }
}

pub fn make_baseline(kind: BaselineKind) -> Result<BaselineRule> {
    if let BaselineKind::Threshold(theta) = kind {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidArgument(format!("threshold must be > 0, got {theta}")));
        }
    }
    Ok(BaselineRule { kind })
}

impl DecisionRule for BaselineRule {
    fn decide(&self, s: &State) -> Option<Action> {
        if !s.is_valid() {
            return None;
        }
        Some(forced_action(s).unwrap_or_else(|| {
            let v2 = s.v2.finite().expect("decision states queue a packet");
            self.decision(s.v1, v2)
        }))
    }

    fn name(&self) -> String {
        match self.kind {
            BaselineKind::AlwaysPreempt => "always_preempt".into(),
            BaselineKind::NeverPreempt => "never_preempt".into(),
            BaselineKind::Threshold(theta) => format!("threshold_{theta:.4}"),
        }
    }
}

/// A solved table extended past its cap: a decision state `(v1, v2, 1)` with
/// `v1 > N` takes the table's action at `(N, min(v2, N), 1)`, which is the
/// continuation the threshold shape in `v1` predicts.
#[derive(Debug, Clone)]
pub struct ExtendedPolicy {
    policy: Policy,
    name: String,
}

impl ExtendedPolicy {
    pub fn new(policy: Policy, name: impl Into<String>) -> Self {
        ExtendedPolicy { policy, name: name.into() }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }
}

impl DecisionRule for ExtendedPolicy {
    fn decide(&self, s: &State) -> Option<Action> {
        if let Some(a) = self.policy.get(s) {
            return Some(a);
        }
        if !s.is_valid() {
            return None;
        }
        if let Some(a) = forced_action(s) {
            return Some(a);
        }
        let n = self.policy.space().n();
        let v2 = s.v2.finite()?.min(n);
        self.policy.get(&State::queued(n, v2, true))
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Samples the successor of `s` under `a`. The transmission succeeds iff
/// `channel < q` (with `q = q2` for re-transmissions, `q1` for fresh packets)
/// and a fresh packet arrives iff `arrival < p`.
pub fn step<T: Scalar>(s: &State, a: Action, params: &Params<T>, channel: T, arrival: T) -> State {
    let fresh = arrival < params.p();
    let delivered = a != Action::Idle && channel < params.success_prob(a);
    match a {
        Action::Retransmit => {
            let v2 = s.v2.finite().expect("retransmit needs a queued packet");
            if delivered {
                State { v1: v2 + 1, v2: Age::Inf, fresh }
            } else {
                State { v1: s.v1 + 1, v2: Age::Finite(v2 + 1), fresh }
            }
        }
        Action::TransmitNew => {
            if delivered {
                State { v1: 1, v2: Age::Inf, fresh }
            } else {
                State { v1: s.v1 + 1, v2: Age::Finite(1), fresh }
            }
        }
        Action::Idle => State { v1: s.v1 + 1, v2: Age::Inf, fresh },
    }
}

/// Event counts of a trajectory, for checking the channel and arrival
/// frequencies against `p`, `q1` and `q2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelCounts {
    pub arrivals: u64,
    pub first_attempts: u64,
    pub first_successes: u64,
    pub retransmissions: u64,
    pub retransmission_successes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub horizon: u64,
    pub seed: u64,
    /// Mean of the age at the user over the horizon (the age recorded for a
    /// slot is the user's age at the end of it).
    pub time_average_age: f64,
    /// Batch-means standard error of the time average.
    pub std_error: f64,
    pub half_width_99: f64,
    /// Mean gap between consecutive slots that start in `(1, inf, 1)`.
    pub mean_return_time: Option<f64>,
    pub counts: ChannelCounts,
}

/// Run settings for [`simulate`].
pub struct SimOptions<'a> {
    pub horizon: u64,
    pub seed: u64,
    pub init: State,
    /// Optional per-slot dump `slot,v1,v2,b,action` for debugging.
    pub trace: Option<&'a mut dyn Write>,
}

impl SimOptions<'_> {
    /// Starts from `(1, inf, 0)`.
    pub fn new(horizon: u64, seed: u64) -> Self {
        SimOptions { horizon, seed, init: State::empty(1, false), trace: None }
    }
}

/// 99% two-sided Student-t half-width factor for `dof` degrees of freedom.
fn t_quantile_995(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64).expect("positive degrees of freedom").inverse_cdf(0.995)
}

fn batch_means(batch_sums: &[u64], batch_len: u64) -> (f64, f64) {
    let k = batch_sums.len() as f64;
    let means: Vec<f64> = batch_sums.iter().map(|&s| s as f64 / batch_len as f64).collect();
    let grand = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (k - 1.0);
    let se = (var / k).sqrt();
    (se, t_quantile_995(batch_sums.len() - 1) * se)
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidArgument(format!("trace write failed: {e}"))
}

/// Simulates `rule` for `opts.horizon` slots.
pub fn simulate<T: Scalar, R: DecisionRule + ?Sized>(
    rule: &R,
    params: &Params<T>,
    mut opts: SimOptions<'_>,
) -> Result<TrajectoryStats> {
    if opts.horizon < MIN_HORIZON {
        return Err(Error::InvalidArgument(format!("horizon must be >= {MIN_HORIZON}, got {}", opts.horizon)));
    }
    if !opts.init.is_valid() {
        return Err(Error::InvalidArgument(format!("invalid initial state {}", opts.init)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let batch_len = opts.horizon / BATCHES as u64;
    let mut batch_sums = vec![0u64; BATCHES];
    let mut total: u64 = 0;
    let mut counts = ChannelCounts::default();
    let target = State::empty(1, true);
    let (mut first_visit, mut last_visit, mut visits) = (0u64, 0u64, 0u64);

    if let Some(w) = opts.trace.as_mut() {
        writeln!(w, "slot,v1,v2,b,action").map_err(io_err)?;
    }
    let mut s = opts.init;
    for t in 0..opts.horizon {
        let a = rule.decide(&s).ok_or(Error::PolicyUndefined(s))?;
        if !is_feasible(&s, a) {
            return Err(Error::Infeasible { state: s, action: a });
        }
        if s == target {
            if visits == 0 {
                first_visit = t;
            }
            last_visit = t;
            visits += 1;
        }
        if let Some(w) = opts.trace.as_mut() {
            writeln!(w, "{t},{},{},{},{}", s.v1, s.v2, s.b(), a).map_err(io_err)?;
        }
        let channel: f64 = rng.random();
        let arrival: f64 = rng.random();
        let next = step(&s, a, params, T::of(channel), T::of(arrival));
        debug_assert!(next.is_valid(), "{next}");

        counts.arrivals += next.fresh as u64;
        let delivered = next.v2 == Age::Inf && a != Action::Idle;
        match a {
            Action::TransmitNew => {
                counts.first_attempts += 1;
                counts.first_successes += delivered as u64;
            }
            Action::Retransmit => {
                counts.retransmissions += 1;
                counts.retransmission_successes += delivered as u64;
            }
            Action::Idle => {}
        }

        let age = u64::from(next.v1);
        total += age;
        let batch = (t / batch_len) as usize;
        if batch < BATCHES {
            batch_sums[batch] += age;
        }
        s = next;
    }
    let (std_error, half_width_99) = batch_means(&batch_sums, batch_len);
    let mean_return_time = (visits >= 2).then(|| (last_visit - first_visit) as f64 / (visits - 1) as f64);
    Ok(TrajectoryStats {
        horizon: opts.horizon,
        seed: opts.seed,
        time_average_age: total as f64 / opts.horizon as f64,
        std_error,
        half_width_99,
        mean_return_time,
        counts,
    })
}

/// Engine check with a closed-form answer, outside the MDP's feasibility
/// rules: every fresh packet is sent once and dropped if the transmission
/// fails. The age resets with probability `p q1` per slot, so the time
/// average tends to `1 / (p q1)`.
pub fn simulate_drop_baseline<T: Scalar>(params: &Params<T>, horizon: u64, seed: u64) -> Result<f64> {
    if horizon < MIN_DROP_HORIZON {
        return Err(Error::InvalidArgument(format!("horizon must be >= {MIN_DROP_HORIZON}, got {horizon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, q1) = (params.p(), params.q1());
    let mut age: u64 = 1;
    let mut total: u64 = 0;
    for _ in 0..horizon {
        let channel = T::of(rng.random::<f64>());
        let arrival = T::of(rng.random::<f64>());
        age = if arrival < p && channel < q1 { 1 } else { age + 1 };
        total += age;
    }
    Ok(total as f64 / horizon as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: f64, q1: f64, q2: f64) -> Params<f64> {
        Params::new(p, q1, q2).unwrap()
    }

    #[test]
    fn step_certain_delivery() {
        let pr = params(1.0, 1.0, 1.0);
        for (c, a) in [(0.0, 0.0), (0.5, 0.9), (0.999, 0.999)] {
            assert_eq!(step(&State::empty(3, true), Action::TransmitNew, &pr, c, a), State::empty(1, true));
        }
    }

    #[test]
    fn step_certain_failure_without_arrival() {
        let pr = Params::new_unchecked(0.0, 0.0, 0.0);
        for (c, a) in [(0.0, 0.0), (0.5, 0.9)] {
            assert_eq!(step(&State::queued(2, 1, false), Action::Retransmit, &pr, c, a), State::queued(3, 2, false));
        }
    }

    #[test]
    fn baselines() {
        let never = make_baseline(BaselineKind::NeverPreempt).unwrap();
        assert_eq!(never.decide(&State::queued(9, 2, true)), Some(Action::Retransmit));
        let thr = make_baseline(BaselineKind::Threshold(3.0)).unwrap();
        assert_eq!(thr.decide(&State::queued(5, 2, true)), Some(Action::TransmitNew));
        assert_eq!(thr.decide(&State::queued(6, 2, true)), Some(Action::Retransmit));
        assert_eq!(thr.decide(&State::empty(6, false)), Some(Action::Idle));
        assert_eq!(thr.decide(&State::queued(6, 2, false)), Some(Action::Retransmit));
        let always = make_baseline(BaselineKind::AlwaysPreempt).unwrap();
        assert_eq!(always.decide(&State::queued(6, 2, true)), Some(Action::TransmitNew));
        assert!(make_baseline(BaselineKind::Threshold(0.0)).is_err());
        assert!(make_baseline(BaselineKind::Threshold(f64::NAN)).is_err());
    }

    #[test]
    fn always_preempt_degenerate_is_exactly_one() {
        let rule = make_baseline(BaselineKind::AlwaysPreempt).unwrap();
        // from the default (1,inf,0) the first slot idles to age 2, so start delivered-and-fresh
        let mut opts = SimOptions::new(10_000, 7);
        opts.init = State::empty(1, true);
        let stats = simulate(&rule, &params(1.0, 1.0, 1.0), opts).unwrap();
        assert_eq!(stats.time_average_age, 1.0);
        assert_eq!(stats.half_width_99, 0.0);
    }

    #[test]
    fn same_seed_same_stats() {
        let rule = make_baseline(BaselineKind::NeverPreempt).unwrap();
        let pr = params(0.5, 0.3, 0.9);
        let a = simulate(&rule, &pr, SimOptions::new(50_000, 11)).unwrap();
        let b = simulate(&rule, &pr, SimOptions::new(50_000, 11)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&rule, &pr, SimOptions::new(50_000, 12)).unwrap();
        assert_ne!(a.time_average_age, c.time_average_age);
    }

    #[test]
    fn short_horizon_rejected() {
        let rule = make_baseline(BaselineKind::NeverPreempt).unwrap();
        assert!(simulate(&rule, &params(0.5, 0.3, 0.9), SimOptions::new(9_999, 1)).is_err());
        assert!(simulate_drop_baseline(&params(0.5, 0.5, 0.5), 999_999, 1).is_err());
    }

    #[test]
    fn table_policy_undefined_outside_cap() {
        let space = std::sync::Arc::new(crate::model::TruncatedSpace::new(3).unwrap());
        let policy = Policy::never_preempt(space);
        let err = simulate(&policy, &params(0.5, 0.3, 0.9), SimOptions::new(10_000, 1)).unwrap_err();
        match err {
            Error::PolicyUndefined(s) => assert_eq!(s.v1, 4),
            other => panic!("unexpected {other:?}"),
        }
        let ext = ExtendedPolicy::new(policy, "never");
        assert!(simulate(&ext, &params(0.5, 0.3, 0.9), SimOptions::new(10_000, 1)).is_ok());
    }

    #[test]
    fn trace_dump() {
        let rule = make_baseline(BaselineKind::AlwaysPreempt).unwrap();
        let mut buf = Vec::new();
        let mut opts = SimOptions::new(10_000, 3);
        opts.trace = Some(&mut buf);
        simulate(&rule, &params(0.5, 0.3, 0.9), opts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("slot,v1,v2,b,action"));
        assert_eq!(lines.next(), Some("0,1,inf,0,2"));
        assert_eq!(text.lines().count(), 10_001);
    }

    #[test]
    fn drop_baseline_degenerate() {
        assert_eq!(simulate_drop_baseline(&params(1.0, 1.0, 1.0), 1_000_000, 5).unwrap(), 1.0);
    }

    #[test]
    fn t_quantile() {
        // 99% two-sided, 29 dof
        assert!((t_quantile_995(29) - 2.756).abs() < 1e-3);
    }
}
