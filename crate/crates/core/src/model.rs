//! States, actions, transition kernels and one-step cost of the
//! retransmit-or-preempt MDP and of its truncations to `v1 <= N`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Channel and arrival statistics.
///
/// `p` is the per-slot probability that a fresh packet arrives at the base
/// station, `q1` the success probability of a first transmission and `q2`
/// the success probability of a re-transmission. `q1 == q2` is admitted;
/// checks that need `q1 < q2` or `q2 < 1` guard on it themselves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params<T> {
    p: T,
    q1: T,
    q2: T,
}

impl<T: Scalar> Params<T> {
    pub fn new(p: T, q1: T, q2: T) -> Result<Self> {
        let (zero, one) = (T::zero(), T::one());
        if !(p > zero && p <= one) {
            return Err(Error::InvalidArgument(format!("p must be in (0, 1], got {p}")));
        }
        if !(q1 > zero && q1 <= one) {
            return Err(Error::InvalidArgument(format!("q1 must be in (0, 1], got {q1}")));
        }
        if !(q2 > zero && q2 <= one) {
            return Err(Error::InvalidArgument(format!("q2 must be in (0, 1], got {q2}")));
        }
        if q1 > q2 {
            return Err(Error::InvalidArgument(format!("q1 must be <= q2, got q1 = {q1}, q2 = {q2}")));
        }
        Ok(Params { p, q1, q2 })
    }

    /// Builds parameters without range checks. Used by the simulator's
    /// degenerate test cases (`q = 0`, `p = 0`) which the MDP itself never sees.
    pub fn new_unchecked(p: T, q1: T, q2: T) -> Self {
        Params { p, q1, q2 }
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn q1(&self) -> T {
        self.q1
    }

    pub fn q2(&self) -> T {
        self.q2
    }

    /// Success probability of the transmission made under `action`.
    pub fn success_prob(&self, action: Action) -> T {
        match action {
            Action::Retransmit => self.q2,
            Action::TransmitNew => self.q1,
            Action::Idle => T::zero(),
        }
    }
}

/// Age of the packet waiting at the base station; `Inf` when the queue is empty.
///
/// The derived ordering puts every finite age below `Inf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Age {
    Finite(u32),
    Inf,
}

impl Age {
    pub fn is_finite(self) -> bool {
        matches!(self, Age::Finite(_))
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Age::Finite(v) => Some(v),
            Age::Inf => None,
        }
    }
}

impl fmt::Display for Age {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Age::Finite(v) => write!(f, "{v}"),
            Age::Inf => f.write_str("inf"),
        }
    }
}

impl FromStr for Age {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "inf" {
            return Ok(Age::Inf);
        }
        match s.parse::<u32>() {
            Ok(v) if v >= 1 => Ok(Age::Finite(v)),
            _ => Err(Error::InvalidArgument(format!("bad age value {s:?}"))),
        }
    }
}

/// System state `(v1, v2, b)`: age at the user, age of the queued packet and
/// whether a fresh packet arrived this slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct State {
    pub v1: u32,
    pub v2: Age,
    pub fresh: bool,
}

impl State {
    pub fn new(v1: u32, v2: Age, fresh: bool) -> Result<Self> {
        let s = State { v1, v2, fresh };
        if s.is_valid() {
            Ok(s)
        } else {
            Err(Error::InvalidArgument(format!("invalid state {s}")))
        }
    }

    /// State with a queued packet of age `v2`. Panics on `v2 > v1` or zero ages.
    pub fn queued(v1: u32, v2: u32, fresh: bool) -> Self {
        Self::new(v1, Age::Finite(v2), fresh).expect("valid queued state")
    }

    /// State with an empty queue. Panics on `v1 == 0`.
    pub fn empty(v1: u32, fresh: bool) -> Self {
        Self::new(v1, Age::Inf, fresh).expect("valid empty-queue state")
    }

    pub fn is_valid(&self) -> bool {
        self.v1 >= 1
            && match self.v2 {
                Age::Finite(v2) => (1..=self.v1).contains(&v2),
                Age::Inf => true,
            }
    }

    pub fn b(&self) -> u8 {
        self.fresh as u8
    }

    /// A decision state is one where both re-transmitting and preempting are allowed.
    pub fn is_decision(&self) -> bool {
        self.fresh && self.v2.is_finite()
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.v1, self.v2, self.b())
    }
}

impl FromStr for State {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad state literal {s:?}"));
        let inner = s.trim().strip_prefix('(').and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let v1 = parts[0].parse::<u32>().map_err(|_| bad())?;
        let v2 = parts[1].parse::<Age>()?;
        let fresh = match parts[2] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        State::new(v1, v2, fresh)
    }
}

/// Base-station action. Discriminants follow the usual numbering
/// 0 = re-transmit, 1 = transmit the fresh packet, 2 = idle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Action {
    Retransmit = 0,
    TransmitNew = 1,
    Idle = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Retransmit, Action::TransmitNew, Action::Idle];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Action> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Feasible actions in `s`, in ascending action order.
pub fn feasible_actions(s: &State) -> &'static [Action] {
    match (s.v2.is_finite(), s.fresh) {
        (true, true) => &[Action::Retransmit, Action::TransmitNew],
        (true, false) => &[Action::Retransmit],
        (false, true) => &[Action::TransmitNew],
        (false, false) => &[Action::Idle],
    }
}

pub fn is_feasible(s: &State, a: Action) -> bool {
    feasible_actions(s).contains(&a)
}

fn check_feasible(s: &State, a: Action) -> Result<()> {
    if is_feasible(s, a) {
        Ok(())
    } else {
        Err(Error::Infeasible { state: *s, action: a })
    }
}

/// Probability distribution over successor states. Entries are distinct and
/// strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDist<T> {
    entries: Vec<(State, T)>,
}

impl<T: Scalar> TransitionDist<T> {
    fn with_capacity(n: usize) -> Self {
        TransitionDist { entries: Vec::with_capacity(n) }
    }

    /// Adds mass to `s`, merging with an existing entry. Zero mass is dropped.
    fn add(&mut self, s: State, prob: T) {
        if prob <= T::zero() {
            return;
        }
        match self.entries.iter_mut().find(|(t, _)| *t == s) {
            Some((_, w)) => *w += prob,
            None => self.entries.push((s, prob)),
        }
    }

    pub fn entries(&self) -> &[(State, T)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prob(&self, s: &State) -> T {
        self.entries.iter().find(|(t, _)| t == s).map_or(T::zero(), |&(_, w)| w)
    }

    pub fn total(&self) -> T {
        self.entries.iter().map(|&(_, w)| w).sum()
    }

    /// Expected age at the user after the transition.
    pub fn expected_v1(&self) -> T {
        self.entries.iter().map(|&(s, w)| w * T::of_age(s.v1)).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(State, T)> {
        self.entries.iter()
    }
}

/// Kernel of the untruncated MDP.
pub fn transitions<T: Scalar>(s: &State, a: Action, params: &Params<T>) -> Result<TransitionDist<T>> {
    check_feasible(s, a)?;
    let one = T::one();
    let p = params.p;
    let mut dist = TransitionDist::with_capacity(4);
    match a {
        Action::Retransmit => {
            let q2 = params.q2;
            let v2 = s.v2.finite().expect("retransmit needs a queued packet");
            let fail_age = Age::Finite(v2 + 1);
            dist.add(State { v1: s.v1 + 1, v2: fail_age, fresh: true }, p * (one - q2));
            dist.add(State { v1: s.v1 + 1, v2: fail_age, fresh: false }, (one - p) * (one - q2));
            dist.add(State { v1: v2 + 1, v2: Age::Inf, fresh: false }, (one - p) * q2);
            dist.add(State { v1: v2 + 1, v2: Age::Inf, fresh: true }, p * q2);
        }
        Action::TransmitNew => {
            let q1 = params.q1;
            let fail_age = Age::Finite(1);
            dist.add(State { v1: s.v1 + 1, v2: fail_age, fresh: false }, (one - p) * (one - q1));
            dist.add(State { v1: s.v1 + 1, v2: fail_age, fresh: true }, p * (one - q1));
            dist.add(State { v1: 1, v2: Age::Inf, fresh: false }, (one - p) * q1);
            dist.add(State { v1: 1, v2: Age::Inf, fresh: true }, p * q1);
        }
        Action::Idle => {
            dist.add(State { v1: s.v1 + 1, v2: Age::Inf, fresh: false }, one - p);
            dist.add(State { v1: s.v1 + 1, v2: Age::Inf, fresh: true }, p);
        }
    }
    Ok(dist)
}

/// Kernel of the truncated MDP on `space`.
///
/// Successors with `v1 > N` are redirected to `(N, min(v2', v2), b')` where
/// `v2'`, `b'` belong to the escaping successor and `v2` to the current
/// state; an empty queue in the successor stays empty.
pub fn transitions_truncated<T: Scalar>(
    s: &State,
    a: Action,
    params: &Params<T>,
    space: &TruncatedSpace,
) -> Result<TransitionDist<T>> {
    space.index(s)?;
    let full = transitions(s, a, params)?;
    let n = space.n();
    let mut dist = TransitionDist::with_capacity(full.len());
    for &(succ, w) in full.iter() {
        if succ.v1 <= n {
            dist.add(succ, w);
        } else {
            let v2 = match succ.v2 {
                Age::Inf => Age::Inf,
                finite => finite.min(s.v2),
            };
            dist.add(State { v1: s.v1, v2, fresh: succ.fresh }, w);
        }
    }
    Ok(dist)
}

/// Expected age at the user after taking `a` in `s`.
///
/// Identical for the full and the truncated model; at `v1 = N` it may
/// reference age `N + 1`.
pub fn cost<T: Scalar>(s: &State, a: Action, params: &Params<T>) -> Result<T> {
    check_feasible(s, a)?;
    let one = T::one();
    let next_v1 = T::of_age(s.v1 + 1);
    Ok(match a {
        Action::Retransmit => {
            let v2 = s.v2.finite().expect("retransmit needs a queued packet");
            params.q2 * T::of_age(v2 + 1) + (one - params.q2) * next_v1
        }
        Action::TransmitNew => params.q1 + (one - params.q1) * next_v1,
        Action::Idle => next_v1,
    })
}

/// The state space `S_N`: every state with `1 <= v1 <= N`.
///
/// States are ordered by `v1`, then `v2` (empty queue last), then `b`.
/// The order is fixed, so tables indexed by it are reproducible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncatedSpace {
    n: u32,
    states: Vec<State>,
}

impl TruncatedSpace {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("N must be >= 1".into()));
        }
        let mut states = Vec::with_capacity(Self::cardinality(n));
        for v1 in 1..=n {
            let ages = (1..=v1).map(Age::Finite).chain(std::iter::once(Age::Inf));
            for v2 in ages {
                for fresh in [false, true] {
                    states.push(State { v1, v2, fresh });
                }
            }
        }
        debug_assert_eq!(states.len(), Self::cardinality(n));
        Ok(TruncatedSpace { n, states })
    }

    /// `|S_N| = N (N + 3)`.
    pub fn cardinality(n: u32) -> usize {
        let n = n as usize;
        n * (n + 3)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn contains(&self, s: &State) -> bool {
        s.is_valid() && s.v1 <= self.n
    }

    pub fn index(&self, s: &State) -> Result<usize> {
        self.try_index(s).ok_or(Error::OutOfSpace { state: *s, n: self.n })
    }

    pub fn try_index(&self, s: &State) -> Option<usize> {
        if !self.contains(s) {
            return None;
        }
        let v1 = s.v1 as usize;
        // rows below v1 hold 2 (k + 1) states each
        let row = (v1 - 1) * (v1 + 2);
        let slot = match s.v2 {
            Age::Finite(v2) => v2 as usize - 1,
            Age::Inf => v1,
        };
        Some(row + 2 * slot + s.fresh as usize)
    }

    pub fn state(&self, index: usize) -> Option<State> {
        self.states.get(index).copied()
    }

    /// Index of the reference state `(1, 1, 1)`.
    pub fn reference_index(&self) -> usize {
        self.try_index(&State::queued(1, 1, true)).expect("(1,1,1) is in every S_N")
    }

    /// Indices of the decision states `(v1, v2, 1)` with a queued packet.
    pub fn decision_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.states.iter().enumerate().filter(|(_, s)| s.is_decision()).map(|(i, _)| i)
    }
}

/// One feasible action of a state with its cost and successor slice.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Choice<T> {
    pub action: Action,
    pub cost: T,
    start: u32,
    end: u32,
}

/// The truncated MDP with its kernel compiled to index form.
#[derive(Debug, Clone)]
pub struct TruncatedMdp<T> {
    space: Arc<TruncatedSpace>,
    params: Params<T>,
    choice_start: Vec<u32>,
    choices: Vec<Choice<T>>,
    succ: Vec<u32>,
    prob: Vec<T>,
}

impl<T: Scalar> TruncatedMdp<T> {
    pub fn new(space: impl Into<Arc<TruncatedSpace>>, params: Params<T>) -> Self {
        let space = space.into();
        let mut choice_start = Vec::with_capacity(space.len() + 1);
        let mut choices = Vec::with_capacity(space.len() * 2);
        let mut succ = Vec::with_capacity(space.len() * 8);
        let mut prob = Vec::with_capacity(space.len() * 8);
        for s in space.states() {
            choice_start.push(choices.len() as u32);
            for &a in feasible_actions(s) {
                let dist = transitions_truncated(s, a, &params, &space).expect("state in space");
                let start = succ.len() as u32;
                for &(t, w) in dist.iter() {
                    succ.push(space.try_index(&t).expect("redirected successor in space") as u32);
                    prob.push(w);
                }
                let cost = cost(s, a, &params).expect("feasible action");
                choices.push(Choice { action: a, cost, start, end: succ.len() as u32 });
            }
        }
        choice_start.push(choices.len() as u32);
        TruncatedMdp { space, params, choice_start, choices, succ, prob }
    }

    pub fn with_cap(n: u32, params: Params<T>) -> Result<Self> {
        Ok(Self::new(TruncatedSpace::new(n)?, params))
    }

    pub fn space(&self) -> &TruncatedSpace {
        &self.space
    }

    pub fn shared_space(&self) -> Arc<TruncatedSpace> {
        Arc::clone(&self.space)
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    pub(crate) fn choices(&self, state: usize) -> &[Choice<T>] {
        let lo = self.choice_start[state] as usize;
        let hi = self.choice_start[state + 1] as usize;
        &self.choices[lo..hi]
    }

    pub(crate) fn choice(&self, state: usize, action: Action) -> Option<&Choice<T>> {
        self.choices(state).iter().find(|c| c.action == action)
    }

    pub(crate) fn successors(&self, choice: &Choice<T>) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = choice.start as usize..choice.end as usize;
        self.succ[r.clone()].iter().map(|&j| j as usize).zip(self.prob[r].iter().copied())
    }

    /// `cost + discount * E[values(next)]` for one choice.
    pub(crate) fn lookahead(&self, choice: &Choice<T>, values: &[T], discount: T) -> T {
        let expect: T = self.successors(choice).map(|(j, w)| w * values[j]).sum();
        choice.cost + discount * expect
    }

    /// Minimum lookahead over the feasible actions of `state`; ties go to the
    /// lower action number.
    pub(crate) fn best(&self, state: usize, values: &[T], discount: T) -> (Action, T) {
        let mut it = self.choices(state).iter();
        let first = it.next().expect("every state has a feasible action");
        let mut best = (first.action, self.lookahead(first, values, discount));
        for c in it {
            let q = self.lookahead(c, values, discount);
            if q.partial_cmp(&best.1) == Some(Ordering::Less) {
                best = (c.action, q);
            }
        }
        best
    }
}
