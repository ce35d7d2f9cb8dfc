//! The multi-round active-learning driver and its JSON report.
//!
//! Every method in a run shares one evaluation split and one initial labeled
//! set. Each round refits the classifier from scratch on the labeled set,
//! caches class probabilities, asks the selector for `b` pool points and
//! moves them into the labeled set.
//!
//! Pool accuracy is measured on the initial unlabeled pool, which stays fixed
//! across rounds and methods (points that get labeled stay in it).

use std::path::{Path, PathBuf};
use std::time::Instant;

use firal_core::fisher::FisherContext;
use firal_core::logistic::{fit, predict_accuracy, ClassProbTable, FitOptions, FitWarning};
use firal_core::numkit::Matrix;
use firal_core::relax::{relax_solve_exact, relax_solve_fast, RelaxConfig, RelaxOutcome};
use firal_core::round::{default_eta_grid, tune_eta, tune_eta_exact, RoundConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{entropy_select, kmeans_select, random_select};
use crate::config::{DataSource, ExperimentConfig, Solver};
use crate::data::{generate_synthetic, load_dataset, load_labels, Dataset};
use crate::error::{HarnessError, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub fn load_experiment_data(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic(spec) => generate_synthetic(spec),
        DataSource::File { path, labels } => {
            let mut ds = load_dataset(path)?;
            if let Some(lp) = labels {
                let l = load_labels(lp)?;
                if l.len() != ds.len() {
                    return Err(HarnessError::data(
                        lp,
                        format!("{} labels for {} points", l.len(), ds.len()),
                    ));
                }
                ds.labels = Some(l);
            }
            Ok(ds)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub eval: Vec<usize>,
    pub initial_labeled: Vec<usize>,
    pub initial_pool: Vec<usize>,
}

/// Holds out `eval_fraction` of the points, then draws `per_class` labeled
/// points of every class from the rest. Index lists come out sorted.
pub fn make_split(
    labels: &[usize],
    num_classes: usize,
    eval_fraction: f64,
    per_class: usize,
    seed: u64,
) -> Result<Split> {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_eval = (n as f64 * eval_fraction).floor() as usize;
    let mut eval = order[..n_eval].to_vec();
    let train = &order[n_eval..];

    let mut taken = vec![0usize; num_classes];
    let mut labeled = Vec::new();
    let mut pool = Vec::new();
    for &i in train {
        let y = labels[i];
        if taken[y] < per_class {
            taken[y] += 1;
            labeled.push(i);
        } else {
            pool.push(i);
        }
    }
    if let Some(k) = taken.iter().position(|&t| t < per_class) {
        return Err(HarnessError::config(
            "init_per_class",
            format!(
                "class {k} has only {} training points, {per_class} needed",
                taken[k]
            ),
        ));
    }
    eval.sort_unstable();
    labeled.sort_unstable();
    pool.sort_unstable();
    Ok(Split {
        eval,
        initial_labeled: labeled,
        initial_pool: pool,
    })
}

/// Solver knobs shared by every round.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorSettings {
    pub relax: RelaxConfig,
    pub eta_grid: Option<Vec<f64>>,
    pub allow_repeats: bool,
}

impl SelectorSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            relax: cfg.relax.clone(),
            eta_grid: cfg.eta_grid.clone(),
            allow_repeats: cfg.allow_repeats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub total_cg_iterations: usize,
    pub cg_max_iter_hits: usize,
    /// Largest `|Σz − 1|` seen over the run.
    pub max_simplex_error: f64,
    /// Smallest weight seen over the run.
    pub min_weight: f64,
    /// `|Σ z_⋄ − b|` for the returned weights.
    pub budget_sum_error: f64,
}

impl RelaxSummary {
    fn from_outcome(o: &RelaxOutcome, b: usize) -> Self {
        let t = &o.trace;
        Self {
            iterations: t.iterations(),
            converged: t.converged,
            final_objective: t.objectives.last().copied().unwrap_or(f64::NAN),
            total_cg_iterations: t.cg_iterations.iter().sum(),
            cg_max_iter_hits: t.cg_max_iter_hits.iter().sum(),
            max_simplex_error: t.simplex_sum_error.iter().copied().fold(0.0, f64::max),
            min_weight: t.simplex_min.iter().copied().fold(f64::INFINITY, f64::min),
            budget_sum_error: (o.z_diamond.iter().sum::<f64>() - b as f64).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Dataset row indices, in selection order.
    pub selected: Vec<usize>,
    pub relax: Option<RelaxOutcome>,
    pub eta: Option<f64>,
    pub relax_seconds: f64,
    pub round_seconds: f64,
}

/// One batch from the given selector. `probs` covers every dataset row.
#[allow(clippy::too_many_arguments)]
pub fn select_batch(
    solver: Solver,
    features: &Matrix,
    probs: &ClassProbTable,
    labeled: &[usize],
    pool: &[usize],
    b: usize,
    settings: &SelectorSettings,
    seed: u64,
) -> Result<Selection> {
    if b > pool.len()
        && !(settings.allow_repeats && matches!(solver, Solver::Exact | Solver::Approx))
    {
        return Err(HarnessError::config(
            "budget",
            format!(
                "budget {b} exceeds the {} remaining pool points",
                pool.len()
            ),
        ));
    }
    let plain = |positions: Vec<usize>, secs: f64| Selection {
        selected: positions.into_iter().map(|j| pool[j]).collect(),
        relax: None,
        eta: None,
        relax_seconds: 0.0,
        round_seconds: secs,
    };
    let start = Instant::now();
    match solver {
        Solver::Random => {
            let s = random_select(pool.len(), b, seed);
            Ok(plain(s, start.elapsed().as_secs_f64()))
        }
        Solver::Kmeans => {
            let s = kmeans_select(features, pool, b, seed);
            Ok(plain(s, start.elapsed().as_secs_f64()))
        }
        Solver::Entropy => {
            let s = entropy_select(probs, pool, b);
            Ok(plain(s, start.elapsed().as_secs_f64()))
        }
        Solver::Exact | Solver::Approx => {
            let ctx = FisherContext::new(
                features.clone(),
                probs.clone(),
                labeled.to_vec(),
                pool.to_vec(),
            )?;
            let relax_cfg = RelaxConfig {
                seed,
                ..settings.relax.clone()
            };
            let round_cfg = RoundConfig {
                b,
                eta_grid: settings
                    .eta_grid
                    .clone()
                    .unwrap_or_else(|| default_eta_grid(ctx.dim(), b)),
                allow_repeats: settings.allow_repeats,
            };
            let exact = solver == Solver::Exact;
            let relax = if exact {
                relax_solve_exact(&ctx, b, &relax_cfg)?
            } else {
                relax_solve_fast(&ctx, b, &relax_cfg)?
            };
            let relax_seconds = start.elapsed().as_secs_f64();
            let round_start = Instant::now();
            let (eta, positions) = if exact {
                let (eta, o) = tune_eta_exact(&ctx, &relax.z_diamond, &round_cfg, false)?;
                (eta, o.selected)
            } else {
                let t = tune_eta(&ctx, &relax.z_diamond, &round_cfg)?;
                (t.eta, t.best().selected.clone())
            };
            Ok(Selection {
                selected: positions.into_iter().map(|j| pool[j]).collect(),
                relax: Some(relax),
                eta: Some(eta),
                relax_seconds,
                round_seconds: round_start.elapsed().as_secs_f64(),
            })
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub fit_seconds: f64,
    pub relax_seconds: f64,
    pub round_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0 is the initial fit before any selection.
    pub round: usize,
    pub selected: Vec<usize>,
    pub num_labeled: usize,
    pub pool_remaining: usize,
    pub pool_accuracy: f64,
    /// `None` when nothing is held out.
    pub eval_accuracy: Option<f64>,
    pub eta: Option<f64>,
    pub relax: Option<RelaxSummary>,
    pub fit_warnings: Vec<String>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub solver: Solver,
    pub rounds: Vec<RoundRecord>,
}

impl MethodReport {
    pub fn final_round(&self) -> &RoundRecord {
        self.rounds.last().expect("round 0 is always recorded")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub points: usize,
    pub dim: usize,
    pub classes: usize,
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub split: Split,
    pub methods: Vec<MethodReport>,
}

impl SelectionReport {
    pub fn method(&self, solver: Solver) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.solver == solver)
    }

    /// Copy with every timing zeroed, for run-to-run comparison.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for m in &mut r.methods {
            for rec in &mut m.rounds {
                rec.timings = Timings::default();
            }
        }
        r
    }

    /// Long-form plot data: one line per (round, method).
    pub fn plot_csv(&self) -> String {
        let mut s = String::from("round,method,num_labeled,pool_accuracy,eval_accuracy\n");
        for m in &self.methods {
            for r in &m.rounds {
                let eval = r.eval_accuracy.map(|v| v.to_string()).unwrap_or_default();
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.round, m.solver, r.num_labeled, r.pool_accuracy, eval
                ));
            }
        }
        s
    }

    /// Writes the JSON report to `path` and the plot data next to it with a
    /// `.plot.csv` extension. Returns the CSV path.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json).map_err(|e| HarnessError::io(path, e))?;
        let csv_path = path.with_extension("plot.csv");
        std::fs::write(&csv_path, self.plot_csv()).map_err(|e| HarnessError::io(&csv_path, e))?;
        Ok(csv_path)
    }
}

/// Seed for one (round, purpose) pair, independent of the method.
fn round_seed(seed: u64, round: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(round as u64 + 1)
}

struct Learner<'a> {
    data: &'a Dataset,
    labels: &'a [usize],
    classes: usize,
    opts: FitOptions,
}

struct Fitted {
    probs: ClassProbTable,
    pool_accuracy: f64,
    eval_accuracy: Option<f64>,
    warnings: Vec<String>,
    seconds: f64,
}

impl Learner<'_> {
    fn fit(&self, labeled: &[usize], split: &Split) -> Result<Fitted> {
        let start = Instant::now();
        let x = self.data.features.select_rows(labeled);
        let y: Vec<usize> = labeled.iter().map(|&i| self.labels[i]).collect();
        let rep = fit(&x, &y, self.classes, self.opts)?;
        let probs = ClassProbTable::compute(&rep.weights, &self.data.features)?;
        let accuracy = |idx: &[usize]| -> Result<f64> {
            let xs = self.data.features.select_rows(idx);
            let ys: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
            Ok(predict_accuracy(&rep.weights, &xs, &ys)?)
        };
        let pool_accuracy = accuracy(&split.initial_pool)?;
        let eval_accuracy = if split.eval.is_empty() {
            None
        } else {
            Some(accuracy(&split.eval)?)
        };
        let warnings = rep
            .warnings
            .iter()
            .map(|w| match w {
                FitWarning::DegenerateLabels { present } => {
                    format!("degenerate labels: only classes {present:?} present")
                }
                FitWarning::MaxIterReached => "classifier fit hit max_iter".to_string(),
            })
            .collect();
        Ok(Fitted {
            probs,
            pool_accuracy,
            eval_accuracy,
            warnings,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

fn dataset_labels(data: &Dataset) -> Result<&[usize]> {
    data.labels
        .as_deref()
        .ok_or_else(|| HarnessError::config("labels", "the dataset has no labels"))
}

/// Runs every configured method for `cfg.rounds` rounds.
pub fn run_active_learning(cfg: &ExperimentConfig) -> Result<SelectionReport> {
    cfg.validate()?;
    let data = load_experiment_data(&cfg.data)?;
    run_on_dataset(cfg, &data)
}

pub fn run_on_dataset(cfg: &ExperimentConfig, data: &Dataset) -> Result<SelectionReport> {
    cfg.validate()?;
    let labels = dataset_labels(data)?;
    let classes = data.num_classes().unwrap_or(0).max(2);
    let split = make_split(
        labels,
        classes,
        cfg.eval_fraction,
        cfg.init_per_class,
        cfg.seed,
    )?;
    if cfg.budget * cfg.rounds > split.initial_pool.len() {
        return Err(HarnessError::config(
            "budget",
            format!(
                "budget·rounds = {} exceeds the pool of {}",
                cfg.budget * cfg.rounds,
                split.initial_pool.len()
            ),
        ));
    }
    let learner = Learner {
        data,
        labels,
        classes,
        opts: FitOptions {
            l2: cfg.l2,
            max_iter: cfg.fit_max_iter,
        },
    };
    let settings = SelectorSettings::from_config(cfg);

    let mut methods = Vec::with_capacity(cfg.solvers.len());
    for &solver in &cfg.solvers {
        let mut labeled = split.initial_labeled.clone();
        let mut pool = split.initial_pool.clone();
        let fitted = learner.fit(&labeled, &split)?;
        let mut rounds = vec![RoundRecord {
            round: 0,
            selected: Vec::new(),
            num_labeled: labeled.len(),
            pool_remaining: pool.len(),
            pool_accuracy: fitted.pool_accuracy,
            eval_accuracy: fitted.eval_accuracy,
            eta: None,
            relax: None,
            fit_warnings: fitted.warnings,
            timings: Timings {
                fit_seconds: fitted.seconds,
                ..Default::default()
            },
        }];
        let mut probs = fitted.probs;
        for r in 1..=cfg.rounds {
            let sel = select_batch(
                solver,
                &data.features,
                &probs,
                &labeled,
                &pool,
                cfg.budget,
                &settings,
                round_seed(cfg.seed, r),
            )?;
            let mut fresh = sel.selected.clone();
            fresh.sort_unstable();
            fresh.dedup();
            pool.retain(|i| fresh.binary_search(i).is_err());
            labeled.extend(&fresh);
            labeled.sort_unstable();

            let fitted = learner.fit(&labeled, &split)?;
            rounds.push(RoundRecord {
                round: r,
                selected: sel.selected,
                num_labeled: labeled.len(),
                pool_remaining: pool.len(),
                pool_accuracy: fitted.pool_accuracy,
                eval_accuracy: fitted.eval_accuracy,
                eta: sel.eta,
                relax: sel
                    .relax
                    .as_ref()
                    .map(|o| RelaxSummary::from_outcome(o, cfg.budget)),
                fit_warnings: fitted.warnings,
                timings: Timings {
                    fit_seconds: fitted.seconds,
                    relax_seconds: sel.relax_seconds,
                    round_seconds: sel.round_seconds,
                },
            });
            probs = fitted.probs;
        }
        methods.push(MethodReport { solver, rounds });
    }

    Ok(SelectionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        dataset: DatasetSummary {
            points: data.len(),
            dim: data.dim(),
            classes,
            class_counts: data.class_counts(),
        },
        split,
        methods,
    })
}

/// A single selection round with the first configured solver. Without an
/// explicit labeled set, `init_per_class` points per class are drawn; the
/// pool is every other point (no evaluation split).
pub fn select_once(
    cfg: &ExperimentConfig,
    data: &Dataset,
    labeled: Option<Vec<usize>>,
) -> Result<Selection> {
    cfg.validate()?;
    let labels = dataset_labels(data)?;
    let classes = data.num_classes().unwrap_or(0).max(2);
    let labeled = match labeled {
        Some(mut l) => {
            l.sort_unstable();
            l.dedup();
            if let Some(&bad) = l.iter().find(|&&i| i >= data.len()) {
                return Err(HarnessError::config(
                    "labeled",
                    format!("index {bad} out of range for {} points", data.len()),
                ));
            }
            l
        }
        None => make_split(labels, classes, 0.0, cfg.init_per_class, cfg.seed)?.initial_labeled,
    };
    let pool: Vec<usize> = (0..data.len())
        .filter(|i| labeled.binary_search(i).is_err())
        .collect();
    let learner = Learner {
        data,
        labels,
        classes,
        opts: FitOptions {
            l2: cfg.l2,
            max_iter: cfg.fit_max_iter,
        },
    };
    let split = Split {
        eval: Vec::new(),
        initial_labeled: labeled.clone(),
        initial_pool: pool.clone(),
    };
    let fitted = learner.fit(&labeled, &split)?;
    select_batch(
        cfg.solvers[0],
        &data.features,
        &fitted.probs,
        &labeled,
        &pool,
        cfg.budget,
        &SelectorSettings::from_config(cfg),
        round_seed(cfg.seed, 1),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_covers_everything() {
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let s = make_split(&labels, 3, 0.5, 2, 5).unwrap();
        assert_eq!(s.eval.len(), 20);
        assert_eq!(s.initial_labeled.len(), 6);
        let mut all: Vec<usize> = s
            .eval
            .iter()
            .chain(&s.initial_labeled)
            .chain(&s.initial_pool)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        for k in 0..3 {
            assert_eq!(
                s.initial_labeled
                    .iter()
                    .filter(|&&i| labels[i] == k)
                    .count(),
                2
            );
        }
    }

    #[test]
    fn missing_class_is_a_config_error() {
        let labels = vec![0, 0, 0, 2];
        assert!(matches!(
            make_split(&labels, 3, 0.0, 1, 0),
            Err(HarnessError::Config { .. })
        ));
    }

    #[test]
    fn round_seeds_differ() {
        assert_ne!(round_seed(0, 1), round_seed(0, 2));
        assert_ne!(round_seed(1, 1), round_seed(2, 1));
    }
}
