//! Experiment configuration: a flat `key = value` file plus overrides.
//!
//! Lines starting with `#` and blank lines are ignored. Command-line flags
//! are applied after the file through [`ExperimentConfig::set`], so they
//! win.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use firal_core::relax::RelaxConfig;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Dense relax and dense rounding.
    Exact,
    /// Hutchinson relax and block-diagonal rounding.
    Approx,
    Random,
    Kmeans,
    Entropy,
}

impl Solver {
    pub const ALL: [Solver; 5] = [
        Solver::Exact,
        Solver::Approx,
        Solver::Random,
        Solver::Kmeans,
        Solver::Entropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Solver::Exact => "exact",
            Solver::Approx => "approx",
            Solver::Random => "random",
            Solver::Kmeans => "kmeans",
            Solver::Entropy => "entropy",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Solver::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| {
                format!("unknown solver `{s}` (expected exact, approx, random, kmeans or entropy)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// A CSV or binary matrix file; binary files take labels from a side file.
    File {
        path: PathBuf,
        labels: Option<PathBuf>,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Initially labeled points drawn from each class.
    pub init_per_class: usize,
    pub rounds: usize,
    pub budget: usize,
    /// Methods to run, each on the same split and initial labels.
    pub solvers: Vec<Solver>,
    pub relax: RelaxConfig,
    /// Explicit learning-rate grid; the default is `{0.1,…,30}·√d̃/b`.
    pub eta_grid: Option<Vec<f64>>,
    pub allow_repeats: bool,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Share of points held out for evaluation accuracy.
    pub eval_fraction: f64,
    pub l2: f64,
    pub fit_max_iter: usize,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic(SyntheticSpec::default()),
            init_per_class: 1,
            rounds: 3,
            budget: 10,
            solvers: vec![Solver::Approx],
            relax: RelaxConfig::default(),
            eta_grid: None,
            allow_repeats: false,
            seed: 0,
            out: None,
            eval_fraction: 0.5,
            l2: 1.0,
            fit_max_iter: 5000,
            threads: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::config(
            key,
            format!("expected a boolean, got `{value}`"),
        )),
    }
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies every `key = value` line, tagging errors with the line number.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let with_line = |e: HarnessError| match e {
                HarnessError::Config { field, message, .. } => HarnessError::Config {
                    field,
                    line: Some(i + 1),
                    message,
                },
                other => other,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| with_line(HarnessError::config(line, "expected `key = value`")))?;
            self.set(key.trim(), value.trim()).map_err(with_line)?;
        }
        Ok(())
    }

    fn synthetic_mut(&mut self, key: &str) -> Result<&mut SyntheticSpec> {
        if !matches!(self.data, DataSource::Synthetic(_)) {
            return Err(HarnessError::config(
                key,
                "synthetic keys conflict with `data`",
            ));
        }
        match &mut self.data {
            DataSource::Synthetic(s) => Ok(s),
            DataSource::File { .. } => unreachable!(),
        }
    }

    /// Sets one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => {
                let labels = match &self.data {
                    DataSource::File { labels, .. } => labels.clone(),
                    DataSource::Synthetic(_) => None,
                };
                self.data = DataSource::File {
                    path: value.into(),
                    labels,
                };
            }
            "labels" => match &mut self.data {
                DataSource::File { labels, .. } => *labels = Some(value.into()),
                DataSource::Synthetic(_) => {
                    return Err(HarnessError::config(key, "set `data` before `labels`"))
                }
            },
            "synthetic.classes" => self.synthetic_mut(key)?.classes = parse(key, value)?,
            "synthetic.dim" => self.synthetic_mut(key)?.dim = parse(key, value)?,
            "synthetic.points_per_class" => {
                self.synthetic_mut(key)?.points_per_class = parse(key, value)?
            }
            "synthetic.spread" => self.synthetic_mut(key)?.spread = parse(key, value)?,
            "synthetic.imbalance" => self.synthetic_mut(key)?.imbalance = parse(key, value)?,
            "synthetic.seed" => self.synthetic_mut(key)?.seed = parse(key, value)?,
            "init_per_class" => self.init_per_class = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "budget" => self.budget = parse(key, value)?,
            "solver" => {
                self.solvers = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse().map_err(|m: String| HarnessError::config(key, m)))
                    .collect::<Result<_>>()?
            }
            "s" => self.relax.s = parse(key, value)?,
            "cg_tol" => self.relax.cg_tol = parse(key, value)?,
            "cg_max_iter" => self.relax.cg_max_iter = parse(key, value)?,
            "max_md_iters" => self.relax.max_md_iters = parse(key, value)?,
            "obj_rel_tol" => self.relax.obj_rel_tol = parse(key, value)?,
            "beta0" => self.relax.beta0 = parse(key, value)?,
            "scale_sigma_by_budget" => self.relax.scale_sigma_by_budget = parse_bool(key, value)?,
            "backtrack_exact" => self.relax.backtrack_exact = parse_bool(key, value)?,
            "eta_grid" => self.eta_grid = Some(parse_list(key, value)?),
            "allow_repeats" => self.allow_repeats = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = Some(value.into()),
            "eval_fraction" => self.eval_fraction = parse(key, value)?,
            "l2" => self.l2 = parse(key, value)?,
            "fit_max_iter" => self.fit_max_iter = parse(key, value)?,
            "threads" => self.threads = Some(parse(key, value)?),
            _ => return Err(HarnessError::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(HarnessError::config("rounds", "must be at least 1"));
        }
        if self.budget == 0 {
            return Err(HarnessError::config("budget", "must be at least 1"));
        }
        if self.solvers.is_empty() {
            return Err(HarnessError::config("solver", "no solver given"));
        }
        if self.init_per_class == 0 {
            return Err(HarnessError::config("init_per_class", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(HarnessError::config("eval_fraction", "must lie in [0, 1)"));
        }
        if !(self.l2 >= 0.0) {
            return Err(HarnessError::config("l2", "must be non-negative"));
        }
        if let Some(grid) = &self.eta_grid {
            if grid.is_empty() || grid.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
                return Err(HarnessError::config(
                    "eta_grid",
                    "needs positive finite entries",
                ));
            }
        }
        if self.threads == Some(0) {
            return Err(HarnessError::config("threads", "must be at least 1"));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.relax
            .validate()
            .map_err(|e| HarnessError::config("relax", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_override() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("# comment\nbudget = 4\nsolver = exact, random\n\nseed=9\n")
            .unwrap();
        assert_eq!(cfg.budget, 4);
        assert_eq!(cfg.solvers, vec![Solver::Exact, Solver::Random]);
        cfg.set("budget", "7").unwrap();
        assert_eq!(cfg.budget, 7);
        assert_eq!(cfg.seed, 9);
        cfg.validate().unwrap();
    }

    #[test]
    fn errors_carry_line_and_field() {
        let mut cfg = ExperimentConfig::default();
        let err = cfg.apply_text("rounds = 2\nbudget = ten\n").unwrap_err();
        match err {
            HarnessError::Config { field, line, .. } => {
                assert_eq!(field, "budget");
                assert_eq!(line, Some(2));
            }
            other => panic!("{other}"),
        }
        let err = cfg.apply_text("frobnicate = 1").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(cfg.apply_text("solver = best").is_err());
    }

    #[test]
    fn zero_rounds_or_budget_rejected() {
        let mut cfg = ExperimentConfig {
            rounds: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.rounds = 1;
        cfg.budget = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn eta_grid_list() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("eta_grid", "0.5,1,2").unwrap();
        assert_eq!(cfg.eta_grid, Some(vec![0.5, 1.0, 2.0]));
        cfg.set("eta_grid", "0.5,-1").unwrap();
        assert!(cfg.validate().is_err());
    }
}
