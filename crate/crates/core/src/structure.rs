//! Exhaustive checkers for the structural properties of solved instances:
//! monotonicity of the value function, switching of the preemption region
//! in `v2`, concavity in `v1`, the difference-ratio bounds, and the
//! re-transmission threshold in `v1`.
//!
//! Each checker visits every tuple of its inequality on the integer grid of
//! `S_N`, including the boundary row `v1 = N`, and reports rather than
//! panics on violations.

use std::fmt;

use crate::model::{Action, Age, Params, State};
use crate::num::Scalar;
use crate::solver::{threshold_start, Policy, ValueTable};

/// Tolerance applied to every value inequality.
pub const STRUCTURE_TOL: f64 = 1e-9;

/// Violations kept per report.
pub const MAX_REPORTED: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Preconditions of the property do not hold (e.g. `q1 == q2`).
    NotApplicable,
}

/// One tuple where `lhs <= rhs + tol` failed.
///
/// `(v1, v2, b)` is the base state; `x` and `y` are the offsets the check
/// applies (for the difference-ratio check `x = v2bar - v2`). Policy checks
/// store action codes in `lhs` / `rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub v1: u32,
    pub v2: Age,
    pub b: u8,
    pub x: u32,
    pub y: u32,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub name: &'static str,
    pub status: CheckStatus,
    pub tol: f64,
    pub checked: u64,
    /// Number of tuples above `tol`; only the first [`MAX_REPORTED`] are kept
    /// in `violations`.
    pub failed: u64,
    /// `max(0, max(lhs - rhs))` over every checked tuple.
    pub worst: f64,
    /// Same maximum restricted to tuples touching the row `v1 = N`.
    pub worst_boundary: f64,
    /// `row_worst[r]` is the maximum over tuples whose largest `v1` is `r`
    /// (index 0 unused; empty for not-applicable reports).
    pub row_worst: Vec<f64>,
    pub violations: Vec<Violation>,
    pub note: Option<String>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }

    /// Worst violation over tuples that stay at or below row `max_row`.
    pub fn worst_up_to_row(&self, max_row: u32) -> f64 {
        self.row_worst.iter().take(max_row as usize + 1).copied().fold(0.0, f64::max)
    }

    fn not_applicable(name: &'static str, why: &str) -> Self {
        StructureReport {
            name,
            status: CheckStatus::NotApplicable,
            tol: STRUCTURE_TOL,
            checked: 0,
            failed: 0,
            worst: 0.0,
            worst_boundary: 0.0,
            row_worst: Vec::new(),
            violations: Vec::new(),
            note: Some(why.to_string()),
        }
    }
}

impl fmt::Display for StructureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::NotApplicable => "N/A",
        };
        write!(
            f,
            "{} {}: checked={} failed={} worst={:e} worst_boundary={:e} tol={:e}",
            self.name, status, self.checked, self.failed, self.worst, self.worst_boundary, self.tol
        )?;
        if let Some(note) = &self.note {
            write!(f, " ({note})")?;
        }
        Ok(())
    }
}

struct Collector {
    name: &'static str,
    tol: f64,
    checked: u64,
    failed: u64,
    worst: f64,
    row_worst: Vec<f64>,
    violations: Vec<Violation>,
}

impl Collector {
    fn new(name: &'static str, tol: f64, n: u32) -> Self {
        Collector {
            name,
            tol,
            checked: 0,
            failed: 0,
            worst: 0.0,
            row_worst: vec![0.0; n as usize + 1],
            violations: Vec::new(),
        }
    }

    /// Records the inequality `lhs <= rhs` for a tuple whose largest `v1` is `row`.
    fn record(&mut self, v: Violation, row: u32) {
        self.checked += 1;
        let gap = v.lhs - v.rhs;
        if gap > self.worst {
            self.worst = gap;
        }
        let slot = &mut self.row_worst[row as usize];
        *slot = slot.max(gap);
        if gap > self.tol {
            self.failed += 1;
            if self.violations.len() < MAX_REPORTED {
                self.violations.push(v);
            }
        }
    }

    fn finish(self) -> StructureReport {
        let status = if self.worst <= self.tol { CheckStatus::Pass } else { CheckStatus::Fail };
        StructureReport {
            name: self.name,
            status,
            tol: self.tol,
            checked: self.checked,
            failed: self.failed,
            worst: self.worst,
            worst_boundary: *self.row_worst.last().expect("at least row 0"),
            row_worst: self.row_worst,
            violations: self.violations,
            note: None,
        }
    }
}

fn q(v1: u32, v2: u32, b: u8) -> State {
    State { v1, v2: Age::Finite(v2), fresh: b == 1 }
}

fn e(v1: u32, b: u8) -> State {
    State { v1, v2: Age::Inf, fresh: b == 1 }
}

/// `V(v1 + x, v2 + y, b) >= V(v1, v2, b)` for every pair of queued states,
/// and `V(v1, inf, b) <= V(v1 + x, inf, b)`.
pub fn check_monotonicity<T: Scalar>(values: &ValueTable<T>) -> StructureReport {
    let n = values.space().n();
    let mut c = Collector::new("monotonicity", STRUCTURE_TOL, n);
    let val = |s: State| values.at(s).as_f64();
    for b in 0..=1u8 {
        for v1 in 1..=n {
            for v2 in 1..=v1 {
                let base = val(q(v1, v2, b));
                for v1x in v1..=n {
                    for v2y in v2..=v1x {
                        let other = val(q(v1x, v2y, b));
                        let viol =
                            Violation { v1, v2: Age::Finite(v2), b, x: v1x - v1, y: v2y - v2, lhs: base, rhs: other };
                        c.record(viol, v1x);
                    }
                }
            }
            let base = val(e(v1, b));
            for v1x in v1..=n {
                let viol = Violation { v1, v2: Age::Inf, b, x: v1x - v1, y: 0, lhs: base, rhs: val(e(v1x, b)) };
                c.record(viol, v1x);
            }
        }
    }
    c.finish()
}

/// Decreasing increments in `v1` for every fixed `(v2, b)` with `v2` finite:
/// `V(v1+1) - V(v1) <= V(v1) - V(v1-1)` for `v2 <= v1 - 1`, `v1 + 1 <= N`.
pub fn check_concavity<T: Scalar>(values: &ValueTable<T>) -> StructureReport {
    let n = values.space().n();
    let mut c = Collector::new("concavity", STRUCTURE_TOL, n);
    let val = |s: State| values.at(s).as_f64();
    for b in 0..=1u8 {
        for v2 in 1..=n {
            for v1 in (v2 + 1)..n {
                let (lo, mid, hi) = (val(q(v1 - 1, v2, b)), val(q(v1, v2, b)), val(q(v1 + 1, v2, b)));
                let viol = Violation { v1, v2: Age::Finite(v2), b, x: 1, y: 0, lhs: hi - mid, rhs: mid - lo };
                c.record(viol, v1 + 1);
            }
        }
    }
    c.finish()
}

/// With `D(w) = V(v1 + y, w, b) - V(v1, w, b)` and `v2 <= v2bar <= v1`:
/// `D(v2) <= D(v2bar)` and `D(v2bar) <= (1 - q1) / (1 - q2) * D(v2)`,
/// for `y >= 1` and `v1 + y <= N`. Not applicable when `q2 == 1`.
pub fn check_difference_bounds<T: Scalar>(values: &ValueTable<T>, params: &Params<T>) -> StructureReport {
    const NAME: &str = "difference_bounds";
    if params.q2() >= T::one() {
        return StructureReport::not_applicable(NAME, "q2 = 1 leaves the ratio bound undefined");
    }
    let ratio = ((T::one() - params.q1()) / (T::one() - params.q2())).as_f64();
    let n = values.space().n();
    let mut c = Collector::new(NAME, STRUCTURE_TOL, n);
    let vals = values.values();
    let space = values.space();
    let idx = |s: State| space.try_index(&s).expect("state in space");
    let mut diffs = Vec::with_capacity(n as usize);
    for b in 0..=1u8 {
        for v1 in 1..n {
            for y in 1..=(n - v1) {
                diffs.clear();
                diffs.extend((1..=v1).map(|w| (vals[idx(q(v1 + y, w, b))] - vals[idx(q(v1, w, b))]).as_f64()));
                let row = v1 + y;
                for v2 in 1..=v1 {
                    let d_lo = diffs[v2 as usize - 1];
                    for v2bar in v2..=v1 {
                        let d_hi = diffs[v2bar as usize - 1];
                        let base = Violation { v1, v2: Age::Finite(v2), b, x: v2bar - v2, y, lhs: d_lo, rhs: d_hi };
                        c.record(base.clone(), row);
                        c.record(Violation { lhs: d_hi, rhs: ratio * d_lo, ..base }, row);
                    }
                }
            }
        }
    }
    c.finish()
}

/// If the policy preempts at `(v1, v2, 1)` it also preempts at
/// `(v1, v2 + x, 1)` for `0 <= x <= v1 - v2`.
pub fn check_preempt_switching(policy: &Policy) -> StructureReport {
    let n = policy.space().n();
    let mut c = Collector::new("preempt_switching", STRUCTURE_TOL, n);
    for v1 in 1..=n {
        for v2 in 1..=v1 {
            if policy.at(q(v1, v2, 1)) != Action::TransmitNew {
                continue;
            }
            for v2x in v2..=v1 {
                let got = policy.at(q(v1, v2x, 1));
                let viol = Violation {
                    v1,
                    v2: Age::Finite(v2),
                    b: 1,
                    x: 0,
                    y: v2x - v2,
                    lhs: mismatch(got, Action::TransmitNew),
                    rhs: 0.0,
                };
                c.record(viol, v1);
            }
        }
    }
    c.finish()
}

/// If `v1 >= q2 v2 / (q2 - q1)` and the policy re-transmits at `(v1, v2, 1)`,
/// it re-transmits at every `(v1 + x, v2, 1)` with `v1 + x <= N`.
/// Not applicable when `q1 == q2`.
pub fn check_retransmit_threshold<T: Scalar>(policy: &Policy, params: &Params<T>) -> StructureReport {
    const NAME: &str = "retransmit_threshold";
    let n = policy.space().n();
    if threshold_start(params.q1(), params.q2(), 1).is_none() {
        return StructureReport::not_applicable(NAME, "q1 = q2 leaves the threshold undefined");
    }
    let mut c = Collector::new(NAME, STRUCTURE_TOL, n);
    for v2 in 1..=n {
        let thr = threshold_start(params.q1(), params.q2(), v2).expect("q1 < q2");
        for v1 in v2..=n {
            if T::of_age(v1) < thr || policy.at(q(v1, v2, 1)) != Action::Retransmit {
                continue;
            }
            for v1x in v1..=n {
                let got = policy.at(q(v1x, v2, 1));
                let viol = Violation {
                    v1,
                    v2: Age::Finite(v2),
                    b: 1,
                    x: v1x - v1,
                    y: 0,
                    lhs: mismatch(got, Action::Retransmit),
                    rhs: 0.0,
                };
                c.record(viol, v1x);
            }
        }
    }
    c.finish()
}

fn mismatch(got: Action, want: Action) -> f64 {
    if got == want {
        0.0
    } else {
        1.0
    }
}

/// Runs the two policy checks on `policy` and the three value checks on
/// `discounted`.
pub fn check_all<T: Scalar>(policy: &Policy, discounted: &ValueTable<T>, params: &Params<T>) -> Vec<StructureReport> {
    vec![
        check_monotonicity(discounted),
        check_preempt_switching(policy),
        check_concavity(discounted),
        check_difference_bounds(discounted, params),
        check_retransmit_threshold(policy, params),
    ]
}
