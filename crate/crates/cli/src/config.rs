//! Flat `key=value` run configuration.
//!
//! One setting per line, `#` starts a comment, keys are case-sensitive.
//! `p`, `q1` and `q2` accept comma-separated lists; only `sweep` uses more
//! than one value.

use std::collections::HashMap;
use std::path::PathBuf;

use thiserror::Error;

pub const DEFAULT_N: u32 = 200;
pub const DEFAULT_ALPHA: f64 = 0.95;
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
pub const DEFAULT_HORIZON: u64 = 1_000_000;
pub const DEFAULT_SEED: u64 = 1;

const KEYS: [&str; 11] = ["p", "q1", "q2", "N", "alpha", "tol", "max_iter", "horizon", "seed", "out_dir", "policy"];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: malformed line {text:?}, expected key=value")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("{}key {key}: {message}", at_line(*.line))]
    Invalid { line: Option<usize>, key: String, message: String },
}

fn at_line(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

/// Which policy `simulate` runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyChoice {
    /// The RVIA policy at cap `N`, extended past the cap.
    Optimal,
    AlwaysPreempt,
    NeverPreempt,
    /// Re-transmit iff `v1 >= theta * v2`; `None` means `q2 / (q2 - q1)`.
    Threshold(Option<f64>),
}

impl std::str::FromStr for PolicyChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "optimal" => Ok(PolicyChoice::Optimal),
            "always_preempt" => Ok(PolicyChoice::AlwaysPreempt),
            "never_preempt" => Ok(PolicyChoice::NeverPreempt),
            "threshold" => Ok(PolicyChoice::Threshold(None)),
            _ => match s.strip_prefix("threshold:").map(str::parse::<f64>) {
                Some(Ok(theta)) if theta > 0.0 && theta.is_finite() => Ok(PolicyChoice::Threshold(Some(theta))),
                _ => Err(format!(
                    "unknown policy {s:?} (optimal, always_preempt, never_preempt, threshold or threshold:<theta>)"
                )),
            },
        }
    }
}

/// Validated run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub p: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub n: u32,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub horizon: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub policy: PolicyChoice,
}

impl RunConfig {
    /// The single `(p, q1, q2)` point, for every command except `sweep`.
    pub fn point(&self) -> Result<(f64, f64, f64), ConfigError> {
        for (key, list) in [("p", &self.p), ("q1", &self.q1), ("q2", &self.q2)] {
            if list.len() != 1 {
                return Err(ConfigError::Invalid {
                    line: None,
                    key: key.into(),
                    message: format!("expected one value, got {} (lists are for sweep)", list.len()),
                });
            }
        }
        Ok((self.p[0], self.q1[0], self.q2[0]))
    }

    /// Cartesian product of the `p`, `q1`, `q2` lists in file order, skipping
    /// combinations with `q1 > q2`.
    pub fn grid(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &p in &self.p {
            for &q1 in &self.q1 {
                for &q2 in &self.q2 {
                    if q1 <= q2 {
                        out.push((p, q1, q2));
                    }
                }
            }
        }
        out
    }
}

/// Raw settings collected from a file and from command-line overrides.
#[derive(Debug, Default, Clone)]
pub struct ConfigBuilder {
    values: HashMap<&'static str, (Option<usize>, String)>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads `key=value` lines; later lines override earlier ones.
    pub fn parse_text(mut self, text: &str) -> Result<Self, ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .filter(|(k, v)| !k.is_empty() && !v.is_empty())
                .ok_or_else(|| ConfigError::Malformed { line, text: raw.to_string() })?;
            let key = known_key(key).ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_string() })?;
            self.values.insert(key, (Some(line), value.to_string()));
        }
        Ok(self)
    }

    /// Sets `key` from the command line, overriding the file.
    pub fn set(mut self, key: &str, value: impl ToString) -> Result<Self, ConfigError> {
        let key = known_key(key).ok_or_else(|| ConfigError::UnknownKey { line: 0, key: key.to_string() })?;
        self.values.insert(key, (None, value.to_string()));
        Ok(self)
    }

    pub fn build(&self) -> Result<RunConfig, ConfigError> {
        let p = self.probabilities("p")?;
        let q1 = self.probabilities("q1")?;
        let q2 = self.probabilities("q2")?;
        if p.len() == 1 && q1.len() == 1 && q2.len() == 1 && q1[0] > q2[0] {
            return Err(self.invalid("q1", "q1 must be ≤ q2".into()));
        }
        if !q1.iter().any(|a| q2.iter().any(|b| a <= b)) {
            return Err(self.invalid("q1", "q1 must be ≤ q2 for at least one grid point".into()));
        }
        let n = self.scalar("N", DEFAULT_N)?;
        if n < 1 {
            return Err(self.invalid("N", "N must be ≥ 1".into()));
        }
        let alpha = self.scalar("alpha", DEFAULT_ALPHA)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(self.invalid("alpha", "alpha must be in (0, 1)".into()));
        }
        let tol = self.scalar("tol", DEFAULT_TOL)?;
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(self.invalid("tol", "tol must be > 0".into()));
        }
        let max_iter = self.scalar("max_iter", DEFAULT_MAX_ITER)?;
        if max_iter < 1 {
            return Err(self.invalid("max_iter", "max_iter must be ≥ 1".into()));
        }
        Ok(RunConfig {
            p,
            q1,
            q2,
            n,
            alpha,
            tol,
            max_iter,
            horizon: self.scalar("horizon", DEFAULT_HORIZON)?,
            seed: self.scalar("seed", DEFAULT_SEED)?,
            out_dir: self.values.get("out_dir").map_or_else(|| PathBuf::from("."), |(_, v)| PathBuf::from(v)),
            policy: self.scalar("policy", PolicyChoice::Optimal)?,
        })
    }

    fn invalid(&self, key: &str, message: String) -> ConfigError {
        let line = self.values.get(key).and_then(|(line, _)| *line);
        ConfigError::Invalid { line, key: key.to_string(), message }
    }

    fn scalar<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some((_, v)) => v.parse().map_err(|e| self.invalid(key, format!("cannot parse {v:?}: {e}"))),
        }
    }

    fn probabilities(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let (_, raw) = self.values.get(key).ok_or_else(|| self.invalid(key, format!("{key} is required")))?;
        raw.split(',')
            .map(|item| {
                let x: f64 = item
                    .trim()
                    .parse()
                    .map_err(|e| self.invalid(key, format!("cannot parse {:?}: {e}", item.trim())))?;
                if x.is_nan() || x <= 0.0 {
                    Err(self.invalid(key, format!("{key} must be > 0")))
                } else if x > 1.0 {
                    Err(self.invalid(key, format!("{key} must be ≤ 1")))
                } else {
                    Ok(x)
                }
            })
            .collect()
    }
}

fn known_key(key: &str) -> Option<&'static str> {
    KEYS.iter().copied().find(|k| *k == key)
}

/// Parses a complete configuration file.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    ConfigBuilder::new().parse_text(text)?.build()
}
