//! Size sweeps behind the `bench` subcommand.
//!
//! Every timing runs inside a one-thread rayon pool and reports the median
//! over repeats, so ratios between sizes reflect operation counts rather than
//! scheduling.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use firal_core::fisher::{block_diag_sigma, FisherContext, HessianSumOperator};
use firal_core::logistic::ClassProbTable;
use firal_core::numkit::{
    pcg_solve, BlockCholeskyPreconditioner, IdentityPreconditioner, LinearOperator, Matrix,
    PcgOptions,
};
use firal_core::relax::{relax_solve_fast, RelaxConfig};
use firal_core::round::{round_diag, RoundConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchKind {
    Matvec,
    Cg,
    Relax,
    Round,
}

impl BenchKind {
    pub fn name(self) -> &'static str {
        match self {
            BenchKind::Matvec => "matvec",
            BenchKind::Cg => "cg",
            BenchKind::Relax => "relax",
            BenchKind::Round => "round",
        }
    }
}

impl fmt::Display for BenchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        [
            BenchKind::Matvec,
            BenchKind::Cg,
            BenchKind::Relax,
            BenchKind::Round,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| {
            HarnessError::Usage(format!(
                "unknown bench kind `{s}` (expected matvec, cg, relax or round)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub kind: BenchKind,
    pub n_values: Vec<usize>,
    pub d_values: Vec<usize>,
    pub classes: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl BenchSpec {
    /// Doubling-`n` sweep at `d = 16`, `K = 4`.
    pub fn default_for(kind: BenchKind) -> Self {
        let n_values = match kind {
            BenchKind::Matvec => vec![10_000, 20_000, 40_000],
            BenchKind::Cg => vec![2_000, 4_000, 8_000],
            BenchKind::Relax | BenchKind::Round => vec![1_000, 2_000, 4_000],
        };
        Self {
            kind,
            n_values,
            d_values: vec![16],
            classes: 5,
            repeats: 5,
            seed: 0,
        }
    }
}

/// One sweep point. Columns that do not apply to a kind stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub kind: BenchKind,
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    /// Median wall time of the measured operation.
    pub seconds: f64,
    /// Median time to form and factor the block preconditioner.
    pub setup_seconds: Option<f64>,
    pub iterations_block: Option<usize>,
    pub iterations_identity: Option<usize>,
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

/// Features with per-coordinate scales spread over two decades and class
/// probabilities from a softmax of random logits, so that `Σ_z` has a
/// nontrivial block structure. All `n` points form the pool; `c` further
/// points are labeled.
pub fn scaled_context(seed: u64, n: usize, d: usize, c: usize) -> FisherContext {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n + c;
    let scales: Vec<f64> = (0..d)
        .map(|_| 10f64.powf(rng.random_range(-1.0..1.0)))
        .collect();
    let mut data = Vec::with_capacity(total * d);
    for _ in 0..total {
        for s in &scales {
            data.push(s * rng.sample::<f64, _>(StandardNormal));
        }
    }
    let probs: Vec<Vec<f64>> = (0..total)
        .map(|_| {
            let logits: Vec<f64> = (0..c)
                .map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let t: f64 = e.iter().sum();
            e[..c - 1].iter().map(|v| v / t).collect()
        })
        .collect();
    FisherContext::new(
        Matrix::from_vec(total, d, data).expect("shape"),
        ClassProbTable::from_rows(c, &probs).expect("valid probabilities"),
        (n..total).collect(),
        (0..n).collect(),
    )
    .expect("disjoint index sets")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median seconds per call. Each repeat loops the call enough times to
/// take at least about 20 ms.
fn time_per_call(repeats: usize, mut f: impl FnMut()) -> f64 {
    let start = Instant::now();
    f();
    let once = start.elapsed().as_secs_f64().max(1e-9);
    let inner = ((0.02 / once).ceil() as usize).clamp(1, 10_000);
    let samples = (0..repeats.max(1))
        .map(|_| {
            let start = Instant::now();
            for _ in 0..inner {
                f();
            }
            start.elapsed().as_secs_f64() / inner as f64
        })
        .collect();
    median(samples)
}

/// Runs `f` inside a fresh one-thread rayon pool.
pub fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| HarnessError::Usage(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Median time to form `B(Σ_z)` and factor its blocks.
pub fn time_precond_setup(ctx: &FisherContext, z: &[f64], repeats: usize) -> f64 {
    time_per_call(repeats, || {
        let blocks = block_diag_sigma(ctx, z).expect("valid weights");
        std::hint::black_box(BlockCholeskyPreconditioner::new(&blocks).ok());
    })
}

/// Median time of one `H_p v`.
pub fn time_pool_matvec(ctx: &FisherContext, repeats: usize, seed: u64) -> f64 {
    let op = HessianSumOperator::pool(ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..ctx.dim())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let mut out = vec![0.0; ctx.dim()];
    time_per_call(repeats, || op.apply(&v, &mut out))
}

pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    if spec.classes < 2 || spec.n_values.is_empty() || spec.d_values.is_empty() {
        return Err(HarnessError::config(
            "bench",
            "need classes ≥ 2 and at least one n and one d",
        ));
    }
    let mut rows = Vec::new();
    for &d in &spec.d_values {
        for &n in &spec.n_values {
            let row = single_thread(|| bench_point(spec, n, d))??;
            rows.push(row);
        }
    }
    Ok(rows)
}

fn bench_point(spec: &BenchSpec, n: usize, d: usize) -> Result<BenchRow> {
    let c = spec.classes;
    let ctx = scaled_context(spec.seed ^ ((n as u64) << 16) ^ d as u64, n, d, c);
    let mut row = BenchRow {
        kind: spec.kind,
        n,
        d,
        classes: c,
        seconds: 0.0,
        setup_seconds: None,
        iterations_block: None,
        iterations_identity: None,
    };
    let z = vec![1.0 / n as f64; n];
    match spec.kind {
        BenchKind::Matvec => {
            row.seconds = time_pool_matvec(&ctx, spec.repeats, spec.seed);
        }
        BenchKind::Cg => {
            row.setup_seconds = Some(time_precond_setup(&ctx, &z, spec.repeats));
            let pre = BlockCholeskyPreconditioner::new(&block_diag_sigma(&ctx, &z)?)?;
            let sigma = HessianSumOperator::sigma(&ctx, &z)?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let rhs = vec![(0..ctx.dim())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect()];
            let opts = PcgOptions {
                tol: 1e-6,
                max_iter: 20 * ctx.dim(),
            };
            let with = pcg_solve(&sigma, &pre, &rhs, opts)?;
            let without = pcg_solve(&sigma, &IdentityPreconditioner, &rhs, opts)?;
            row.iterations_block = Some(with.total_iterations());
            row.iterations_identity = Some(without.total_iterations());
            row.seconds = time_per_call(spec.repeats, || {
                std::hint::black_box(pcg_solve(&sigma, &pre, &rhs, opts).ok());
            });
        }
        BenchKind::Relax => {
            let cfg = RelaxConfig {
                max_md_iters: 3,
                // a zero tolerance would be rejected; this one never triggers
                obj_rel_tol: 1e-300,
                seed: spec.seed,
                ..Default::default()
            };
            let b = 10.min(n);
            row.seconds = time_per_call(spec.repeats, || {
                std::hint::black_box(relax_solve_fast(&ctx, b, &cfg).ok());
            });
        }
        BenchKind::Round => {
            let b = 10.min(n);
            let zd: Vec<f64> = z.iter().map(|w| w * b as f64).collect();
            let cfg = RoundConfig::new(b, ctx.dim());
            let eta = cfg.eta_grid[2];
            row.seconds = time_per_call(spec.repeats, || {
                std::hint::black_box(round_diag(&ctx, &zd, &cfg, eta).ok());
            });
        }
    }
    Ok(row)
}
