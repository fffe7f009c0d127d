//! Solver results checked against independent computations: a hand-written
//! discounted fixed point, exhaustive policy search, exact evaluation and
//! simulation.

use std::collections::HashMap;
use std::sync::Arc;

use aoi_core::sim::{ExtendedPolicy, SimOptions};
use aoi_core::solver::bellman_sweep;
use aoi_core::{
    brute_force_optimal, discounted_vi, evaluate_policy_exact, greedy_policy, rvia, simulate, simulate_drop_baseline,
    threshold_summary, Action, Age, Mdp64, Params64, Policy, State, TruncatedSpace, ValueMode, ValueTable,
};

const TOL: f64 = 1e-9;
const MAX_ITER: usize = 1_000_000;

fn params(p: f64, q1: f64, q2: f64) -> Params64 {
    Params64::new(p, q1, q2).unwrap()
}

/// States of the truncated model as plain tuples; `None` is an empty queue.
type Key = (u32, Option<u32>, bool);

/// Straight-line re-derivation of the truncated model, sharing no code with
/// the crate: returns `(cost, [(successor, probability)])` per feasible action.
fn hand_kernel(s: Key, n: u32, p: f64, q1: f64, q2: f64) -> Vec<(f64, Vec<(Key, f64)>)> {
    let (v1, v2, b) = s;
    let clamp = |succ: Key| -> Key {
        if succ.0 <= n {
            succ
        } else {
            let v2 = match (succ.1, v2) {
                (None, _) => None,
                (Some(a), Some(c)) => Some(a.min(c)),
                (Some(a), None) => Some(a),
            };
            (v1, v2, succ.2)
        }
    };
    let split = |succ: (u32, Option<u32>), w: f64| -> Vec<(Key, f64)> {
        vec![(clamp((succ.0, succ.1, true)), w * p), (clamp((succ.0, succ.1, false)), w * (1.0 - p))]
    };
    let mut out = Vec::new();
    if let Some(v2) = v2 {
        let c = q2 * f64::from(v2 + 1) + (1.0 - q2) * f64::from(v1 + 1);
        let mut succ = split((v2 + 1, None), q2);
        succ.extend(split((v1 + 1, Some(v2 + 1)), 1.0 - q2));
        out.push((c, succ));
    }
    if b {
        let c = q1 + (1.0 - q1) * f64::from(v1 + 1);
        let mut succ = split((1, None), q1);
        succ.extend(split((v1 + 1, Some(1)), 1.0 - q1));
        out.push((c, succ));
    }
    if v2.is_none() && !b {
        out.push((f64::from(v1 + 1), split((v1 + 1, None), 1.0)));
    }
    out
}

fn hand_states(n: u32) -> Vec<Key> {
    let mut out = Vec::new();
    for v1 in 1..=n {
        for v2 in (1..=v1).map(Some).chain([None]) {
            for b in [false, true] {
                out.push((v1, v2, b));
            }
        }
    }
    out
}

fn to_state(k: Key) -> State {
    State { v1: k.0, v2: k.1.map_or(Age::Inf, Age::Finite), fresh: k.2 }
}

#[test]
fn discounted_values_match_hand_written_fixed_point() {
    let (n, p, q1, q2, alpha) = (3, 0.5, 0.3, 0.9, 0.9);
    let states = hand_states(n);
    assert_eq!(states.len(), 18);
    let mut v: HashMap<Key, f64> = states.iter().map(|&s| (s, 0.0)).collect();
    loop {
        let next: HashMap<Key, f64> = states
            .iter()
            .map(|&s| {
                let best = hand_kernel(s, n, p, q1, q2)
                    .into_iter()
                    .map(|(c, succ)| c + alpha * succ.iter().map(|(t, w)| w * v[t]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                (s, best)
            })
            .collect();
        let diff = states.iter().map(|s| (next[s] - v[s]).abs()).fold(0.0, f64::max);
        v = next;
        if diff < 1e-13 {
            break;
        }
    }
    let mdp = Mdp64::with_cap(n, params(p, q1, q2)).unwrap();
    let table = discounted_vi(&mdp, alpha, 1e-13, MAX_ITER).unwrap();
    for &k in &states {
        let got = table.at(to_state(k));
        assert!((got - v[&k]).abs() < 1e-8, "{k:?}: solver {got}, hand {}", v[&k]);
    }
}

#[test]
fn discounted_iterates_increase_from_zero() {
    let mdp = Mdp64::with_cap(12, params(0.6, 0.3, 0.8)).unwrap();
    let mut v = vec![0.0; mdp.len()];
    for _ in 0..200 {
        let next = bellman_sweep(&mdp, &v, 0.95);
        for (a, b) in v.iter().zip(&next) {
            assert!(b >= a, "iterate decreased: {a} -> {b}");
        }
        v = next;
    }
}

#[test]
fn rvia_matches_exhaustive_search() {
    for (p, q1, q2) in [(0.3, 0.2, 0.9), (0.7, 0.5, 0.6), (0.9, 0.1, 1.0), (0.5, 0.4, 0.4)] {
        let mdp = Mdp64::with_cap(4, params(p, q1, q2)).unwrap();
        let (best, _) = brute_force_optimal(&mdp).unwrap();
        let solved = rvia(&mdp, TOL, MAX_ITER).unwrap();
        assert!((solved.gain - best).abs() < 1e-6, "({p},{q1},{q2}): rvia {} oracle {best}", solved.gain);
    }
}

#[test]
fn greedy_policy_reproduces_reported_gain() {
    for (p, q1, q2) in [(0.5, 0.3, 0.9), (0.2, 0.2, 0.6), (0.8, 0.4, 0.9)] {
        let mdp = Mdp64::with_cap(40, params(p, q1, q2)).unwrap();
        let solved = rvia(&mdp, TOL, MAX_ITER).unwrap();
        let eval = evaluate_policy_exact(&mdp, &solved.policy).unwrap();
        assert!((eval.gain - solved.gain).abs() < 1e-7, "exact {} vs rvia {}", eval.gain, solved.gain);

        // One more Bellman step on the relative values must not change the
        // greedy policy's gain.
        let swept = bellman_sweep(&mdp, solved.values.values(), 1.0);
        let table = ValueTable::new(mdp.shared_space(), swept, ValueMode::Relative).unwrap();
        let again = evaluate_policy_exact(&mdp, &greedy_policy(&mdp, &table)).unwrap();
        assert!((again.gain - eval.gain).abs() < 1e-6);
    }
}

#[test]
fn discounted_average_approaches_optimal_gain() {
    let pr = params(0.5, 0.3, 0.9);
    let mdp = Mdp64::with_cap(30, pr).unwrap();
    let gain = rvia(&mdp, TOL, MAX_ITER).unwrap().gain;
    let start = State::empty(1, false);
    let mut last_gap = f64::INFINITY;
    for alpha in [0.9, 0.99, 0.999] {
        let v = discounted_vi(&mdp, alpha, TOL, MAX_ITER).unwrap();
        let scaled = (1.0 - alpha) * v.at(start);
        let gap = (scaled - gain).abs();
        assert!(gap < last_gap, "alpha {alpha}: gap {gap} not below {last_gap}");
        last_gap = gap;
    }
    assert!(last_gap / gain < 0.05, "relative gap {}", last_gap / gain);
}

#[test]
fn equal_success_probabilities_make_preempting_optimal() {
    for (p, q) in [(0.3, 0.5), (0.8, 0.9), (0.5, 1.0)] {
        let mdp = Mdp64::with_cap(30, params(p, q, q)).unwrap();
        let solved = rvia(&mdp, TOL, MAX_ITER).unwrap();
        for s in mdp.space().states().iter().filter(|s| s.is_decision()) {
            assert_eq!(solved.policy.at(*s), Action::TransmitNew, "{s}");
        }
    }
}

#[test]
fn threshold_rows_follow_solved_policy() {
    let pr = params(0.5, 0.3, 0.9);
    let mdp = Mdp64::with_cap(40, pr).unwrap();
    let solved = rvia(&mdp, TOL, MAX_ITER).unwrap();
    let rows = threshold_summary(&solved.policy, 0.3, 0.9);
    assert!(!rows.is_empty());
    for row in &rows {
        assert_eq!(row.upward_closed, Some(true), "v2 = {}", row.v2);
        for &v1 in &row.retransmit_v1 {
            assert_eq!(solved.policy.at(State::queued(v1, row.v2, true)), Action::Retransmit);
        }
    }
}

#[test]
fn never_preempt_simulation_matches_exact_evaluation() {
    let pr = params(0.5, 0.3, 0.9);
    let space = Arc::new(TruncatedSpace::new(60).unwrap());
    let mdp = Mdp64::new(space.clone(), pr);
    let policy = Policy::never_preempt(space);
    let exact = evaluate_policy_exact(&mdp, &policy).unwrap().gain;
    let rule = ExtendedPolicy::new(policy, "never_preempt");
    let stats = simulate(&rule, &pr, SimOptions::new(2_000_000, 7)).unwrap();
    assert!(
        (stats.time_average_age - exact).abs() <= stats.half_width_99,
        "sim {} ± {} vs exact {exact}",
        stats.time_average_age,
        stats.half_width_99
    );
}

#[test]
fn sampled_successors_match_kernel() {
    use rand::{Rng, SeedableRng};

    let pr = params(0.3, 0.2, 0.8);
    let s = State::queued(2, 1, false);
    let dist = aoi_core::transitions(&s, Action::Retransmit, &pr).unwrap();
    let draws = 1_000_000u32;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut hits: HashMap<State, u32> = HashMap::new();
    for _ in 0..draws {
        let next = aoi_core::step(&s, Action::Retransmit, &pr, rng.random(), rng.random());
        *hits.entry(next).or_default() += 1;
    }
    assert_eq!(hits.len(), dist.len());
    for &(succ, w) in dist.iter() {
        let freq = f64::from(hits[&succ]) / f64::from(draws);
        let se = (w * (1.0 - w) / f64::from(draws)).sqrt();
        assert!((freq - w).abs() < 3.0 * se, "{succ}: {freq} vs {w}");
    }
}

#[test]
fn simulated_event_frequencies_match_parameters() {
    let pr = params(0.4, 0.3, 0.7);
    let space = Arc::new(TruncatedSpace::new(50).unwrap());
    let rule = ExtendedPolicy::new(Policy::never_preempt(space), "never_preempt");
    let stats = simulate(&rule, &pr, SimOptions::new(1_000_000, 3)).unwrap();
    let c = stats.counts;
    let rate = |hit: u64, n: u64, want: f64| {
        let f = hit as f64 / n as f64;
        let se = (want * (1.0 - want) / n as f64).sqrt();
        assert!((f - want).abs() < 4.0 * se, "{f} vs {want}");
    };
    rate(c.arrivals, stats.horizon, 0.4);
    rate(c.first_successes, c.first_attempts, 0.3);
    rate(c.retransmission_successes, c.retransmissions, 0.7);
}

#[test]
fn simulated_return_time_matches_stationary_probability() {
    let pr = params(0.6, 0.4, 0.9);
    let space = Arc::new(TruncatedSpace::new(40).unwrap());
    let mdp = Mdp64::new(space.clone(), pr);
    let policy = Policy::always_preempt(space);
    let target = State::empty(1, true);
    let expected = evaluate_policy_exact(&mdp, &policy).unwrap().mean_return_time(&target).unwrap();
    let stats = simulate(&ExtendedPolicy::new(policy, "always_preempt"), &pr, SimOptions::new(1_000_000, 5)).unwrap();
    let got = stats.mean_return_time.unwrap();
    assert!((got - expected).abs() / expected < 0.02, "sim {got} vs 1/pi {expected}");
}

#[test]
fn drop_baseline_converges_to_closed_form() {
    let avg = simulate_drop_baseline(&params(0.2, 0.1, 0.1), 10_000_000, 1).unwrap();
    assert!((avg - 50.0).abs() / 50.0 < 0.02, "{avg}");
}
