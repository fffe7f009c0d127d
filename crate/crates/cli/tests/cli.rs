//! End-to-end runs of the `aoi` binary.

use std::path::Path;
use std::process::{Command, Output};

fn aoi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn solve_trivial_channel_prints_unit_gain() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.txt", "p=1\nq1=1\nq2=1\nN=10\n");
    let out = aoi(dir.path(), &["solve", "--config", "c.txt"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("gain 1.0\n"), "{}", stdout(&out));
    let values = std::fs::read_to_string(dir.path().join("values.csv")).unwrap();
    let policy = std::fs::read_to_string(dir.path().join("policy.csv")).unwrap();
    assert!(values.starts_with("v1,v2,b,value\n1,1,0,"));
    assert!(policy.starts_with("v1,v2,b,action\n"));
    assert_eq!(policy.lines().count(), 1 + 10 * 13);
    assert!(policy.contains("\n10,inf,1,1\n"));
}

#[test]
fn solve_output_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.txt", "p=0.5\nq1=0.3\nq2=0.9\nN=30\n");
    let mut runs = Vec::new();
    for out in ["a", "b"] {
        assert_eq!(aoi(dir.path(), &["solve", "--config", "c.txt", "--out", out]).status.code(), Some(0));
        runs.push((
            std::fs::read(dir.path().join(out).join("values.csv")).unwrap(),
            std::fs::read(dir.path().join(out).join("policy.csv")).unwrap(),
        ));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn oracle_agrees_at_small_cap() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c4.txt", "p=0.5\nq1=0.3\nq2=0.9\nN=4\n");
    let out = aoi(dir.path(), &["oracle", "--config", "c4.txt"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("|Δgain| < 1e-6"), "{}", stdout(&out));
}

#[test]
fn oracle_refuses_large_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = aoi(dir.path(), &["oracle", "--p", "0.5", "--q1", "0.3", "--q2", "0.9", "--N", "6"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_exit_code_follows_report() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.txt", "p=0.5\nq1=0.3\nq2=0.9\nN=50\n");
    let out = aoi(dir.path(), &["verify", "--config", "c.txt"]);
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    let violations = std::fs::read_to_string(dir.path().join("violations.csv")).unwrap();
    assert!(violations.starts_with("check,v1,v2,b,x,y,lhs,rhs\n"));
    assert!(report.contains("preempt_switching PASS"), "{report}");
    assert!(report.contains("retransmit_threshold PASS"), "{report}");
    let passed = report.contains("overall PASS");
    assert_eq!(out.status.code(), Some(if passed { 0 } else { 2 }), "{report}");
    assert_eq!(violations.lines().count() == 1, passed);
}

#[test]
fn verify_passes_with_reliable_retransmissions() {
    let dir = tempfile::tempdir().unwrap();
    let out = aoi(dir.path(), &["verify", "--p", "0.5", "--q1", "0.3", "--q2", "1", "--N", "30"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert_eq!(std::fs::read_to_string(dir.path().join("violations.csv")).unwrap(), "check,v1,v2,b,x,y,lhs,rhs\n");
}

#[test]
fn simulate_writes_stats_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let args =
        ["simulate", "--p", "0.5", "--q1", "0.3", "--q2", "0.9", "--N", "30", "--horizon", "20000", "--seed", "4"];
    let out = aoi(dir.path(), &[&args[..], &["--trace", "trace.csv"]].concat());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = std::fs::read_to_string(dir.path().join("sim_stats.csv")).unwrap();
    let mut lines = stats.lines();
    assert_eq!(lines.next(), Some("p,q1,q2,policy_name,horizon,seed,avg_age,half_width_99"));
    assert!(lines.next().unwrap().starts_with("0.5,0.3,0.9,optimal,20000,4,"));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 20_001);
    assert!(trace.starts_with("slot,v1,v2,b,action\n0,1,inf,0,2\n"));

    // Same seed, same numbers.
    let again = aoi(dir.path(), &[&args[..], &["--out", "again"]].concat());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(dir.path().join("again/sim_stats.csv")).unwrap(), stats);
}

#[test]
fn simulate_baselines_by_name() {
    let dir = tempfile::tempdir().unwrap();
    for (policy, name) in [("never_preempt", "never_preempt"), ("threshold", "threshold_1.5000")] {
        let out = aoi(
            dir.path(),
            &["simulate", "--p", "0.5", "--q1", "0.3", "--q2", "0.9", "--horizon", "10000", "--policy", policy],
        );
        assert_eq!(out.status.code(), Some(0));
        let stats = std::fs::read_to_string(dir.path().join("sim_stats.csv")).unwrap();
        assert!(stats.contains(&format!(",{name},")), "{stats}");
    }
}

#[test]
fn sweep_covers_feasible_grid() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "g.txt", "p=0.2,0.8\nq1=0.3,0.95\nq2=0.5,0.9\nN=20\n");
    let out = aoi(dir.path(), &["sweep", "--config", "g.txt"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "p,q1,q2,N,gain,iterations,residual");
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1].starts_with("0.2,0.3,0.5,20,"));
}

#[test]
fn compare_lists_optimal_first_and_lowest() {
    let dir = tempfile::tempdir().unwrap();
    let out = aoi(dir.path(), &["compare", "--p", "0.5", "--q1", "0.3", "--q2", "0.9", "--N", "40"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let rows: Vec<(String, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let (name, gain) = l.split_once(',').unwrap();
            (name.to_string(), gain.parse().unwrap())
        })
        .collect();
    let names: Vec<&str> = rows.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["optimal", "always_preempt", "never_preempt", "threshold_1.5000"]);
    assert!(rows.iter().all(|(_, g)| rows[0].1 <= g + 1e-9));
}

#[test]
fn invalid_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "bad.txt", "p=0.5\nq1=0.9\nq2=0.3\n");
    let out = aoi(dir.path(), &["solve", "--config", "bad.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("q1 must be ≤ q2"));

    write_config(dir.path(), "unknown.txt", "p=0.5\nq1=0.3\nq2=0.9\nbeta=2\n");
    let out = aoi(dir.path(), &["solve", "--config", "unknown.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4: unknown key \"beta\""));

    assert_eq!(aoi(dir.path(), &["solve", "--config", "missing.txt"]).status.code(), Some(1));
    assert_eq!(aoi(dir.path(), &["frobnicate"]).status.code(), Some(1));
}

#[test]
fn non_convergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.txt", "p=0.5\nq1=0.3\nq2=0.9\nN=20\nmax_iter=3\n");
    let out = aoi(dir.path(), &["solve", "--config", "c.txt"]);
    assert_eq!(out.status.code(), Some(3));
}
