//! Seeded oracle suites behind the `verify` subcommand.
//!
//! Each suite compares a fast code path against an independent dense
//! computation on randomly generated instances and reports the worst error.

use std::fmt;
use std::str::FromStr;

use firal_core::fisher::{hessian_matvec, FisherContext, StackedVec};
use firal_core::logistic::ClassProbTable;
use firal_core::numkit::{cholesky_factor, find_nu, Matrix, SymMatrix};
use firal_core::relax::{estimate_gradients, exact_gradient, RelaxConfig};
use firal_core::round::{
    round_diag, round_exact, sm_block_update, DiagRounder, ExactRoundOptions, RoundConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Matvec,
    ShermanMorrison,
    Prop1,
    Hutchinson,
    Nu,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Matvec,
        Suite::ShermanMorrison,
        Suite::Prop1,
        Suite::Hutchinson,
        Suite::Nu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Matvec => "matvec",
            Suite::ShermanMorrison => "sherman-morrison",
            Suite::Prop1 => "prop1",
            Suite::Hutchinson => "hutchinson",
            Suite::Nu => "nu",
        }
    }

    pub fn run(self, seed: u64) -> Result<SuiteReport> {
        match self {
            Suite::Matvec => matvec_suite(seed, 200),
            Suite::ShermanMorrison => sherman_morrison_suite(seed, 100),
            Suite::Prop1 => prop1_suite(seed, 50),
            Suite::Hutchinson => hutchinson_suite(seed),
            Suite::Nu => nu_suite(seed, 30),
        }
    }
}

/// `all` expands to every suite; anything unknown is a usage error.
pub fn parse_suites(name: &str) -> Result<Vec<Suite>> {
    if name == "all" {
        return Ok(Suite::ALL.to_vec());
    }
    name.parse().map(|s| vec![s])
}

impl FromStr for Suite {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                HarnessError::Usage(format!(
                    "unknown suite `{s}` (expected matvec, sherman-morrison, prop1, hutchinson, nu or all)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub instances: usize,
    /// Checks evaluated across all instances.
    pub checks: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(suite: Suite, tolerance: f64) -> Self {
        Self {
            suite: suite.name().into(),
            instances: 0,
            checks: 0,
            max_error: 0.0,
            tolerance,
            failures: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Records an error measurement against the suite tolerance.
    fn check(&mut self, err: f64, what: impl FnOnce() -> String) {
        self.checks += 1;
        if err.is_nan() || err > self.max_error {
            self.max_error = if err.is_nan() { f64::NAN } else { err };
        }
        if !(err <= self.tolerance) {
            self.fail(format!("{} (error {err:e})", what()));
        }
    }

    fn fail(&mut self, msg: String) {
        // keep the report readable when everything breaks
        if self.failures.len() < 20 {
            self.failures.push(msg);
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} instances, {} checks, max error {:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.instances,
            self.checks,
            self.max_error,
            self.tolerance
        )?;
        for m in &self.failures {
            write!(f, "\n    {m}")?;
        }
        Ok(())
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// A point strictly inside the simplex, as its first `c − 1` entries.
pub fn random_probs(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
    let t: f64 = w.iter().sum();
    w[..c - 1].iter().map(|v| v / t).collect()
}

/// Random features in `[-1, 1]`, random class probabilities, `n_lab`
/// labeled points followed by `n_pool` pool points.
pub fn random_context(
    rng: &mut ChaCha8Rng,
    n_lab: usize,
    n_pool: usize,
    d: usize,
    c: usize,
) -> FisherContext {
    let n = n_lab + n_pool;
    let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let probs: Vec<Vec<f64>> = (0..n).map(|_| random_probs(rng, c)).collect();
    FisherContext::new(
        Matrix::from_vec(n, d, data).expect("shape"),
        ClassProbTable::from_rows(c, &probs).expect("valid probabilities"),
        (0..n_lab).collect(),
        (n_lab..n).collect(),
    )
    .expect("disjoint index sets")
}

/// Random weights on the simplex scaled to sum to `b`.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, b: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let t: f64 = w.iter().sum();
    w.iter().map(|v| b as f64 * v / t).collect()
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let mut a = SymMatrix::identity(n);
    for _ in 0..n {
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        a.add_outer(1.0, &g);
    }
    a
}

/// `([diag(h) − hhᵀ] ⊗ xxᵀ) v` written out as the dense Kronecker sum.
fn kronecker_matvec(x: &[f64], h: &[f64], v: &[f64]) -> Vec<f64> {
    let (d, k) = (x.len(), h.len());
    let mut out = vec![0.0; d * k];
    for a in 0..k {
        for l in 0..k {
            let c = if a == l {
                h[a] - h[a] * h[a]
            } else {
                -h[a] * h[l]
            };
            for i in 0..d {
                for j in 0..d {
                    out[a * d + i] += c * x[i] * x[j] * v[l * d + j];
                }
            }
        }
    }
    out
}

fn matvec_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Matvec, 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..instances {
        let d = rng.random_range(1..=8);
        let k = rng.random_range(1..=5);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = random_probs(&mut rng, k + 1);
        let v: Vec<f64> = (0..d * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = hessian_matvec(&x, &h, &StackedVec::from_vec(d, k, v.clone())?)?;
        let dense = kronecker_matvec(&x, &h, &v);
        rep.check(rel_err(fast.as_slice(), &dense), || {
            format!("instance {t} (d={d}, K={k})")
        });
        rep.instances += 1;
    }
    Ok(rep)
}

fn sherman_morrison_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::ShermanMorrison, 1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..instances {
        let d = rng.random_range(1..=6);
        let a = random_spd(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gamma = rng.random_range(0.01..5.0);
        let updated = sm_block_update(&cholesky_factor(&a)?.inverse(), gamma, &x)?;
        let mut direct = a.clone();
        direct.add_outer(gamma, &x);
        let oracle = cholesky_factor(&direct)?.inverse();
        rep.check(rel_err(updated.as_slice(), oracle.as_slice()), || {
            format!("instance {t} (d={d})")
        });
        rep.instances += 1;
    }
    Ok(rep)
}

/// `Tr[(B + ηH_i)⁻¹ Σ]` for block-diagonal `B`, `Σ` and the block-truncated
/// `H_i`, by explicit inversion.
fn candidate_trace(
    ctx: &FisherContext,
    b_blocks: &[SymMatrix],
    sigma: &[SymMatrix],
    eta: f64,
    j: usize,
) -> Result<f64> {
    let (x, h) = ctx.pool_point(j);
    let mut r = 0.0;
    for (k, (bk, sk)) in b_blocks.iter().zip(sigma).enumerate() {
        let mut m = bk.clone();
        m.add_outer(eta * h[k] * (1.0 - h[k]), x);
        let inv = cholesky_factor(&m)?.inverse();
        r += inv
            .as_slice()
            .iter()
            .zip(sk.as_slice())
            .map(|(p, q)| p * q)
            .sum::<f64>();
    }
    Ok(r)
}

fn prop1_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Prop1, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..instances {
        let d = rng.random_range(1..=4);
        let c = rng.random_range(2..=4);
        let b = rng.random_range(2..=6);
        let n_lab = c;
        let n_pool = rng.random_range(b + 2..=40 - n_lab);
        let ctx = random_context(&mut rng, n_lab, n_pool, d, c);
        let z = random_weights(&mut rng, n_pool, b);
        let eta = rng.random_range(0.1..3.0);

        let mut rounder = DiagRounder::new(&ctx, &z, b, eta, false)?;
        let sigma = rounder.sigma().blocks().to_vec();
        while !rounder.is_done() {
            let scores = rounder.scores();
            let base = rounder.base_trace();
            let b_blocks: Vec<SymMatrix> = rounder
                .b_inv()
                .blocks()
                .iter()
                .map(|bi| cholesky_factor(bi).map(|f| f.inverse()))
                .collect::<std::result::Result<_, _>>()?;
            let taken = rounder.selected().to_vec();
            let mut best = None::<(usize, f64)>;
            for (j, s) in scores.iter().enumerate() {
                if taken.contains(&j) {
                    continue;
                }
                let r = candidate_trace(&ctx, &b_blocks, &sigma, eta, j)?;
                let step = taken.len();
                rep.check((r - (base - eta * s)).abs() / r.abs(), || {
                    format!("instance {t}, step {step}, point {j}: trace identity")
                });
                if best.is_none_or(|(_, br)| r < br) {
                    best = Some((j, r));
                }
            }
            let pick = rounder.step()?;
            let (want, _) = best.expect("a candidate remains");
            if pick != want {
                rep.fail(format!(
                    "instance {t}: argmax score picked {pick}, argmin trace is {want}"
                ));
            }
        }
        let diag = rounder.finish();
        let exact = round_exact(
            &ctx,
            &z,
            eta,
            b,
            ExactRoundOptions {
                block_diagonal: true,
                allow_repeats: false,
            },
        )?;
        if exact.selected != diag.selected {
            rep.fail(format!(
                "instance {t}: truncated exact round chose {:?}, diagonal round {:?}",
                exact.selected, diag.selected
            ));
        }
        rep.instances += 1;
    }
    Ok(rep)
}

/// Every ±1 vector of length `n`, as columns.
pub fn all_sign_vectors(n: usize) -> Vec<Vec<f64>> {
    (0..1u64 << n)
        .map(|m| {
            (0..n)
                .map(|i| if m >> i & 1 == 1 { -1.0 } else { 1.0 })
                .collect()
        })
        .collect()
}

fn hutchinson_suite(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Hutchinson, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (d, c) with d·(c − 1) ≤ 10
    let shapes = [
        (1, 2),
        (3, 2),
        (2, 3),
        (4, 3),
        (3, 4),
        (5, 3),
        (2, 6),
        (10, 2),
    ];
    let cfg = RelaxConfig {
        cg_tol: 1e-10,
        cg_max_iter: 2000,
        ..Default::default()
    };
    for (t, &(d, c)) in shapes.iter().enumerate() {
        // enough points for every block of Σ_z to be invertible; the criterion
        // compares against Σ_z⁻¹, which singular instances do not have
        let n_pool = rng.random_range(d + 2..=d + 10);
        let ctx = random_context(&mut rng, 2, n_pool, d, c);
        let z = random_weights(&mut rng, n_pool, 1);
        let probes = all_sign_vectors(ctx.dim());
        let (est, _) = estimate_gradients(&ctx, &z, &probes, &cfg)?;
        let exact = exact_gradient(&ctx, &z)?;
        for (i, (a, e)) in est.iter().zip(&exact).enumerate() {
            rep.check((a - e).abs() / e.abs(), || {
                format!("instance {t} (d̃={}), pool point {i}", ctx.dim())
            });
        }
        rep.instances += 1;
    }
    Ok(rep)
}

fn nu_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Nu, 1e-10);
    // all-zero spectra: ν = √d̃ exactly
    for dim in 1..=64usize {
        let nu = find_nu(&vec![0.0; dim], 0.7);
        if nu != (dim as f64).sqrt() {
            rep.fail(format!(
                "zero spectrum of size {dim}: ν = {nu}, expected √{dim}"
            ));
        }
        rep.checks += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..instances {
        let d = rng.random_range(1..=4);
        let c = rng.random_range(2..=4);
        let b = rng.random_range(1..=6);
        let n_pool = rng.random_range(b + 1..=30);
        let ctx = random_context(&mut rng, c, n_pool, d, c);
        let z = random_weights(&mut rng, n_pool, b);
        let eta = rng.random_range(0.05..10.0);
        let start = DiagRounder::new(&ctx, &z, b, eta, false)?.nu();
        if start != (ctx.dim() as f64).sqrt() {
            rep.fail(format!(
                "instance {t}: initial ν = {start}, expected √{}",
                ctx.dim()
            ));
        }
        let diag = round_diag(&ctx, &z, &RoundConfig::new(b, ctx.dim()), eta)?;
        let exact = round_exact(&ctx, &z, eta, b, ExactRoundOptions::default())?;
        for (step, r) in diag.nu_residuals.iter().enumerate() {
            rep.check(r.abs(), || {
                format!("instance {t}, diagonal round step {step}")
            });
        }
        for (step, r) in exact.nu_residuals.iter().enumerate() {
            rep.check(r.abs(), || format!("instance {t}, exact round step {step}"));
        }
        rep.instances += 1;
    }
    Ok(rep)
}
