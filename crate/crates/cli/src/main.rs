use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aoi_cli::commands::EXIT_INVALID;
use aoi_cli::{run_command, CliError, Command, ConfigBuilder, RunOptions};

/// Optimal re-transmit-or-preempt scheduling for age of information.
///
/// Exit codes: 0 success, 1 invalid input, 2 check failure, 3 no convergence.
#[derive(Parser)]
#[command(name = "aoi", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the average-age MDP and write values.csv and policy.csv.
    Solve(Common),
    /// Solve, run the five structure checks and write report.txt and violations.csv.
    Verify(Common),
    /// Simulate a policy and write sim_stats.csv.
    Simulate(Common),
    /// Compare RVIA with exhaustive policy search (N <= 5).
    Oracle(Common),
    /// Solve every point of the p/q1/q2 grid and write sweep.csv.
    Sweep(Common),
    /// Exact average age of the optimal policy and the baselines; writes compare.csv.
    Compare(Common),
}

/// Settings shared by every command; flags override the config file.
#[derive(Args)]
struct Common {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Arrival probability (comma-separated list for sweep).
    #[arg(long)]
    p: Option<String>,
    /// First-transmission success probability.
    #[arg(long)]
    q1: Option<String>,
    /// Re-transmission success probability.
    #[arg(long)]
    q2: Option<String>,
    /// Truncation cap.
    #[arg(long = "N")]
    n: Option<u32>,
    /// Discount factor for the value-function checks.
    #[arg(long)]
    alpha: Option<f64>,
    /// Convergence tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated slots.
    #[arg(long)]
    horizon: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Policy to simulate: optimal, always_preempt, never_preempt, threshold or threshold:<theta>.
    #[arg(long)]
    policy: Option<String>,
    /// Write the per-slot simulation trace (slot,v1,v2,b,action) to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl Cmd {
    fn split(self) -> (Command, Common) {
        match self {
            Cmd::Solve(c) => (Command::Solve, c),
            Cmd::Verify(c) => (Command::Verify, c),
            Cmd::Simulate(c) => (Command::Simulate, c),
            Cmd::Oracle(c) => (Command::Oracle, c),
            Cmd::Sweep(c) => (Command::Sweep, c),
            Cmd::Compare(c) => (Command::Compare, c),
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let (command, args) = cli.command.split();
    let mut builder = ConfigBuilder::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
        builder = builder.parse_text(&text)?;
    }
    let overrides: [(&str, Option<String>); 10] = [
        ("p", args.p),
        ("q1", args.q1),
        ("q2", args.q2),
        ("N", args.n.map(|v| v.to_string())),
        ("alpha", args.alpha.map(|v| v.to_string())),
        ("tol", args.tol.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("horizon", args.horizon.map(|v| v.to_string())),
        ("out_dir", args.out.map(|v| v.display().to_string())),
        ("policy", args.policy),
    ];
    for (key, value) in overrides {
        if let Some(value) = value {
            builder = builder.set(key, value)?;
        }
    }
    let cfg = builder.build()?;
    let outcome = run_command(command, &cfg, &RunOptions { trace: args.trace })?;
    print!("{}", outcome.stdout);
    for file in &outcome.files {
        println!("wrote {}", file.display());
    }
    Ok(outcome.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
