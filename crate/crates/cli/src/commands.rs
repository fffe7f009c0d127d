//! The six batch commands and their exit-code contract.

use std::fmt::Write as _;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use aoi_core::sim::{BaselineKind, DecisionRule, ExtendedPolicy, SimOptions};
use aoi_core::solver::threshold_start;
use aoi_core::structure::check_all;
use aoi_core::{
    brute_force_optimal, discounted_vi, evaluate_policy_exact, make_baseline, rvia, simulate, Mdp64, Params64, Policy,
    SolveResult64, TruncatedSpace,
};

use crate::config::{ConfigError, PolicyChoice, RunConfig};
use crate::output::{fmt_num, policy_table, values_table, write_atomic, Table};

/// Largest cap the exhaustive oracle accepts.
pub const MAX_ORACLE_N: u32 = 5;
/// Agreement required between the oracle and RVIA.
pub const ORACLE_TOL: f64 = 1e-6;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_CHECK_FAILED: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Verify,
    Simulate,
    Oracle,
    Sweep,
    Compare,
}

impl std::str::FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "solve" => Command::Solve,
            "verify" => Command::Verify,
            "simulate" => Command::Simulate,
            "oracle" => Command::Oracle,
            "sweep" => Command::Sweep,
            "compare" => Command::Compare,
            _ => return Err(CliError::Usage(format!("unknown command {s:?}"))),
        })
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] aoi_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(aoi_core::Error::NotConverged { .. }) => EXIT_NOT_CONVERGED,
            _ => EXIT_INVALID,
        }
    }
}

/// Extra switches that are not part of the run configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// `simulate`: write the per-slot trace here.
    pub trace: Option<PathBuf>,
}

/// A finished command: exit code, text for stdout and the files written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: u8,
    pub stdout: String,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    fn ok(stdout: String, files: Vec<PathBuf>) -> Self {
        Outcome { code: EXIT_OK, stdout, files }
    }
}

pub fn run_command(cmd: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    match cmd {
        Command::Solve => solve(cfg),
        Command::Verify => verify(cfg),
        Command::Simulate => simulate_cmd(cfg, opts),
        Command::Oracle => oracle(cfg),
        Command::Sweep => sweep(cfg),
        Command::Compare => compare(cfg),
    }
}

fn params(cfg: &RunConfig) -> Result<Params64, CliError> {
    let (p, q1, q2) = cfg.point()?;
    Ok(Params64::new(p, q1, q2)?)
}

fn save(table: Table, dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    table.save(&path).map_err(|source| CliError::Io { path, source })
}

fn solve_at(cfg: &RunConfig, pr: Params64) -> Result<(Mdp64, SolveResult64), CliError> {
    let mdp = Mdp64::with_cap(cfg.n, pr)?;
    let res = rvia(&mdp, cfg.tol, cfg.max_iter)?;
    Ok((mdp, res))
}

fn header(cfg: &RunConfig, pr: &Params64) -> String {
    format!("p={} q1={} q2={} N={}", fmt_num(pr.p()), fmt_num(pr.q1()), fmt_num(pr.q2()), cfg.n)
}

fn solve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let pr = params(cfg)?;
    let (_, res) = solve_at(cfg, pr)?;
    let files = vec![
        save(values_table(&res.values), &cfg.out_dir, "values.csv")?,
        save(policy_table(&res.policy), &cfg.out_dir, "policy.csv")?,
    ];
    let stdout = format!(
        "{}\ngain {}\niterations {}\nresidual {}\n",
        header(cfg, &pr),
        fmt_num(res.gain),
        res.iterations,
        fmt_num(res.residual)
    );
    Ok(Outcome::ok(stdout, files))
}

fn verify(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let pr = params(cfg)?;
    let (mdp, res) = solve_at(cfg, pr)?;
    let disc = discounted_vi(&mdp, cfg.alpha, cfg.tol, cfg.max_iter)?;
    let reports = check_all(&res.policy, &disc, &pr);
    let all_pass = reports.iter().all(|r| r.passed());

    let mut text = format!("{} alpha={} gain={}\n", header(cfg, &pr), fmt_num(cfg.alpha), fmt_num(res.gain));
    let mut violations = Table::new(&["check", "v1", "v2", "b", "x", "y", "lhs", "rhs"]);
    for r in &reports {
        writeln!(text, "{r}").expect("string write");
        for v in &r.violations {
            violations.row([
                r.name.to_string(),
                v.v1.to_string(),
                v.v2.to_string(),
                v.b.to_string(),
                v.x.to_string(),
                v.y.to_string(),
                fmt_num(v.lhs),
                fmt_num(v.rhs),
            ]);
        }
    }
    writeln!(text, "overall {}", if all_pass { "PASS" } else { "FAIL" }).expect("string write");

    let report_path = cfg.out_dir.join("report.txt");
    write_atomic(&report_path, text.as_bytes()).map_err(|source| CliError::Io { path: report_path.clone(), source })?;
    let files = vec![report_path, save(violations, &cfg.out_dir, "violations.csv")?];
    Ok(Outcome { code: if all_pass { EXIT_OK } else { EXIT_CHECK_FAILED }, stdout: text, files })
}

fn default_threshold(pr: &Params64) -> Result<f64, CliError> {
    threshold_start(pr.q1(), pr.q2(), 1).ok_or_else(|| CliError::Usage("the threshold q2/(q2-q1) needs q1 < q2".into()))
}

fn simulate_cmd(cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    let pr = params(cfg)?;
    let rule: Box<dyn DecisionRule> = match cfg.policy {
        PolicyChoice::Optimal => {
            let (_, res) = solve_at(cfg, pr)?;
            Box::new(ExtendedPolicy::new(res.policy, "optimal"))
        }
        PolicyChoice::AlwaysPreempt => Box::new(make_baseline(BaselineKind::AlwaysPreempt)?),
        PolicyChoice::NeverPreempt => Box::new(make_baseline(BaselineKind::NeverPreempt)?),
        PolicyChoice::Threshold(theta) => {
            let theta = theta.map_or_else(|| default_threshold(&pr), Ok)?;
            Box::new(make_baseline(BaselineKind::Threshold(theta))?)
        }
    };

    let mut sim_opts = SimOptions::new(cfg.horizon, cfg.seed);
    let mut files = Vec::new();
    let stats = match &opts.trace {
        None => simulate(rule.as_ref(), &pr, sim_opts)?,
        Some(path) => {
            let io = |source| CliError::Io { path: path.clone(), source };
            let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            std::fs::create_dir_all(dir).map_err(io)?;
            let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
            let mut w = BufWriter::new(tmp);
            sim_opts.trace = Some(&mut w);
            let stats = simulate(rule.as_ref(), &pr, sim_opts)?;
            w.flush().map_err(io)?;
            let tmp = w.into_inner().map_err(|e| io(e.into_error()))?;
            tmp.persist(path).map_err(|e| io(e.error))?;
            files.push(path.clone());
            stats
        }
    };

    let mut table = Table::new(&["p", "q1", "q2", "policy_name", "horizon", "seed", "avg_age", "half_width_99"]);
    table.row([
        fmt_num(pr.p()),
        fmt_num(pr.q1()),
        fmt_num(pr.q2()),
        rule.name(),
        stats.horizon.to_string(),
        stats.seed.to_string(),
        fmt_num(stats.time_average_age),
        fmt_num(stats.half_width_99),
    ]);
    files.insert(0, save(table, &cfg.out_dir, "sim_stats.csv")?);
    let stdout = format!(
        "{}\npolicy {}\naverage age {} ± {} (99%)\n",
        header(cfg, &pr),
        rule.name(),
        fmt_num(stats.time_average_age),
        fmt_num(stats.half_width_99)
    );
    Ok(Outcome::ok(stdout, files))
}

fn oracle(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.n > MAX_ORACLE_N {
        return Err(CliError::Usage(format!(
            "oracle enumerates every policy and needs N ≤ {MAX_ORACLE_N}, got N={}",
            cfg.n
        )));
    }
    let pr = params(cfg)?;
    let (mdp, res) = solve_at(cfg, pr)?;
    let (best, _) = brute_force_optimal(&mdp)?;
    let diff = (best - res.gain).abs();
    let agree = diff < ORACLE_TOL;
    let stdout = format!(
        "{}\noracle gain {}\nrvia gain {}\n|Δgain| = {}\n|Δgain| {} {ORACLE_TOL:e}\n",
        header(cfg, &pr),
        fmt_num(best),
        fmt_num(res.gain),
        fmt_num(diff),
        if agree { "<" } else { "≥" },
    );
    Ok(Outcome { code: if agree { EXIT_OK } else { EXIT_CHECK_FAILED }, stdout, files: Vec::new() })
}

fn sweep(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let grid = cfg.grid();
    let space = Arc::new(TruncatedSpace::new(cfg.n)?);
    let solved: Vec<_> = grid
        .par_iter()
        .map(|&(p, q1, q2)| -> Result<_, CliError> {
            let mdp = Mdp64::new(space.clone(), Params64::new(p, q1, q2)?);
            let res = rvia(&mdp, cfg.tol, cfg.max_iter)?;
            Ok((p, q1, q2, res.gain, res.iterations, res.residual))
        })
        .collect::<Result<_, _>>()?;

    let mut table = Table::new(&["p", "q1", "q2", "N", "gain", "iterations", "residual"]);
    let mut stdout = String::new();
    for (p, q1, q2, gain, iterations, residual) in solved {
        let row = [
            fmt_num(p),
            fmt_num(q1),
            fmt_num(q2),
            cfg.n.to_string(),
            fmt_num(gain),
            iterations.to_string(),
            fmt_num(residual),
        ];
        writeln!(stdout, "{}", row.join(" ")).expect("string write");
        table.row(row);
    }
    let files = vec![save(table, &cfg.out_dir, "sweep.csv")?];
    Ok(Outcome::ok(stdout, files))
}

fn compare(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let pr = params(cfg)?;
    let (mdp, res) = solve_at(cfg, pr)?;
    let space = mdp.shared_space();
    let mut rows: Vec<(String, Policy)> = vec![
        ("optimal".into(), res.policy.clone()),
        ("always_preempt".into(), Policy::always_preempt(space.clone())),
        ("never_preempt".into(), Policy::never_preempt(space.clone())),
    ];
    if let Ok(theta) = default_threshold(&pr) {
        let rule = make_baseline(BaselineKind::Threshold(theta))?;
        rows.push((rule.name(), rule.to_policy(space)));
    }

    let mut table = Table::new(&["policy", "gain"]);
    let mut stdout = format!("{}\n", header(cfg, &pr));
    for (name, policy) in rows {
        let gain = evaluate_policy_exact(&mdp, &policy)?.gain;
        writeln!(stdout, "{name} {}", fmt_num(gain)).expect("string write");
        table.row([name, fmt_num(gain)]);
    }
    let files = vec![save(table, &cfg.out_dir, "compare.csv")?];
    Ok(Outcome::ok(stdout, files))
}
