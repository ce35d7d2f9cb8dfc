//! Continuous relaxation of the selection problem, solved by entropic
//! mirror descent on the unit simplex.
//!
//! The objective is `f(z) = Tr(Σ_z⁻¹ H_p)` with `Σ_z = H_o + Σ z_i H_i` and
//! gradient `g_i = −Tr(H_i Σ_z⁻¹ H_p Σ_z⁻¹)`. Two solvers share the loop:
//!
//! * [`relax_solve_exact`] forms `Σ_z` densely and evaluates `f` and `g`
//!   exactly. It is the oracle and is capped to small `d̃`.
//! * [`relax_solve_fast`] never forms a `d̃ × d̃` matrix. Gradients come from
//!   a Hutchinson estimate over Rademacher probes, with the two `Σ_z` solves
//!   done by CG preconditioned with the block diagonal of `Σ_z`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fisher::{
    block_diag_sigma, dense_pool_hessian, dense_sigma, hessian_bilinear, BlockShiftedOperator,
    FisherContext, HessianSumOperator,
};
use crate::numkit::{
    cholesky_factor_ridged, dot, pcg_solve, rademacher_fill, BlockCholeskyPreconditioner,
    PcgOptions, SymMatrix,
};

/// Largest `d̃` accepted by the dense gradient and objective.
pub const EXACT_GRADIENT_CAP: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxConfig {
    /// Rademacher probes per gradient estimate.
    pub s: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub max_md_iters: usize,
    /// Stop once the objective changes by less than this, relatively.
    pub obj_rel_tol: f64,
    /// Step is `beta0 / ‖g‖∞`.
    pub beta0: f64,
    pub seed: u64,
    /// Iterate with `Σ_{b·z}` instead of `Σ_z`.
    pub scale_sigma_by_budget: bool,
    /// Exact solver only: halve the step until the objective does not rise.
    pub backtrack_exact: bool,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        Self {
            s: 10,
            cg_tol: 0.1,
            cg_max_iter: 500,
            max_md_iters: 100,
            obj_rel_tol: 1e-4,
            beta0: 1.0,
            seed: 0,
            scale_sigma_by_budget: false,
            backtrack_exact: true,
        }
    }
}

impl RelaxConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if self.s == 0 {
            return Err(Error::InvalidInput("s must be at least 1".into()));
        }
        if !unit(self.cg_tol) || !unit(self.obj_rel_tol) {
            return Err(Error::InvalidInput("tolerances must lie in (0, 1)".into()));
        }
        if !(self.beta0 > 0.0) || !self.beta0.is_finite() {
            return Err(Error::InvalidInput(format!(
                "beta0 {} must be positive",
                self.beta0
            )));
        }
        Ok(())
    }

    fn pcg(&self) -> PcgOptions {
        PcgOptions {
            tol: self.cg_tol,
            max_iter: self.cg_max_iter,
        }
    }
}

/// Per-iteration record of a mirror-descent run. Entry `t` of every vector
/// describes iteration `t`; the simplex fields are measured after the step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelaxTrace {
    pub objectives: Vec<f64>,
    pub grad_inf_norms: Vec<f64>,
    pub betas: Vec<f64>,
    pub cg_iterations: Vec<usize>,
    pub cg_max_iter_hits: Vec<usize>,
    pub simplex_min: Vec<f64>,
    pub simplex_sum_error: Vec<f64>,
    pub converged: bool,
}

impl RelaxTrace {
    pub fn iterations(&self) -> usize {
        self.objectives.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxOutcome {
    /// `b·z`, one weight per pool point.
    pub z_diamond: Vec<f64>,
    pub trace: RelaxTrace,
}

fn sigma_weights(z: &[f64], scale: f64) -> Vec<f64> {
    if scale == 1.0 {
        z.to_vec()
    } else {
        z.iter().map(|w| w * scale).collect()
    }
}

fn check_exact_cap(ctx: &FisherContext) -> Result<()> {
    if ctx.dim() > EXACT_GRADIENT_CAP {
        return Err(Error::SizeCap {
            size: ctx.dim(),
            cap: EXACT_GRADIENT_CAP,
        });
    }
    Ok(())
}

/// Dense `Σ_z⁻¹` with the standard ridge applied when `Σ_z` is singular.
fn dense_sigma_inverse(ctx: &FisherContext, z: &[f64]) -> Result<SymMatrix> {
    let sigma = dense_sigma(ctx, z)?;
    let (f, _) = cholesky_factor_ridged(&sigma)?;
    Ok(f.inverse())
}

/// `f(z) = Tr(Σ_z⁻¹ H_p)`, densely.
pub fn exact_objective(ctx: &FisherContext, z: &[f64]) -> Result<f64> {
    check_exact_cap(ctx)?;
    let sinv = dense_sigma_inverse(ctx, z)?;
    let hp = dense_pool_hessian(ctx)?;
    Ok(dot(sinv.as_slice(), hp.as_slice()))
}

/// `g_i = −Tr(H_i M)` with `M = Σ_z⁻¹ H_p Σ_z⁻¹` formed densely.
pub fn exact_gradient(ctx: &FisherContext, z: &[f64]) -> Result<Vec<f64>> {
    check_exact_cap(ctx)?;
    let sinv = dense_sigma_inverse(ctx, z)?;
    let m = sinv.sandwich(&dense_pool_hessian(ctx)?);
    let (d, kk) = (ctx.d(), ctx.num_blocks());
    Ok((0..ctx.n_pool())
        .into_par_iter()
        .map(|j| {
            let (x, h) = ctx.pool_point(j);
            // q_kl = xᵀ M_kl x over the d × d blocks of M
            let mut q = vec![0.0; kk * kk];
            for k in 0..kk {
                for l in k..kk {
                    let mut s = 0.0;
                    for a in 0..d {
                        let row = &m.row(k * d + a)[l * d..(l + 1) * d];
                        s += x[a] * dot(row, x);
                    }
                    q[k * kk + l] = s;
                    q[l * kk + k] = s;
                }
            }
            // Tr(H_i M) = Σ_k h_k q_kk − hᵀ Q h
            let mut tr = 0.0;
            for k in 0..kk {
                tr += h[k] * q[k * kk + k];
                for l in 0..kk {
                    tr -= h[k] * h[l] * q[k * kk + l];
                }
            }
            -tr
        })
        .collect())
}

/// Products shared by every pool point within one gradient estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct HutchinsonWorkspace {
    /// `Σ_z⁻¹ v_j`
    pub sigma_inv_probes: Vec<Vec<f64>>,
    /// `H_p Σ_z⁻¹ v_j`
    pub hp_sigma_inv_probes: Vec<Vec<f64>>,
    /// `w_j = Σ_z⁻¹ H_p Σ_z⁻¹ v_j`
    pub w: Vec<Vec<f64>>,
    pub cg_iterations: usize,
    pub cg_max_iter_hits: usize,
}

/// Runs the two preconditioned solves. Only the first `n_grad` probes go
/// through the second solve; the rest are objective-only.
fn hutchinson_products(
    ctx: &FisherContext,
    z: &[f64],
    probes: &[Vec<f64>],
    n_grad: usize,
    opts: PcgOptions,
) -> Result<HutchinsonWorkspace> {
    for p in probes {
        check_len(ctx.dim(), p.len())?;
    }
    let precond = BlockCholeskyPreconditioner::new(&block_diag_sigma(ctx, z)?)?;
    // a singular block gets the same ridge in the operator as in the
    // preconditioner, mirroring the dense ridge policy
    let sigma = BlockShiftedOperator::new(
        HessianSumOperator::sigma(ctx, z)?,
        ctx.d(),
        precond.ridges().to_vec(),
    )?;
    let first = pcg_solve(&sigma, &precond, probes, opts)?;
    let hp_w = HessianSumOperator::pool(ctx).apply_many(&first.solution);
    let second = pcg_solve(&sigma, &precond, &hp_w[..n_grad], opts)?;
    Ok(HutchinsonWorkspace {
        cg_iterations: first.total_iterations() + second.total_iterations(),
        cg_max_iter_hits: first.max_iter_hits() + second.max_iter_hits(),
        sigma_inv_probes: first.solution,
        hp_sigma_inv_probes: hp_w,
        w: second.solution,
    })
}

/// `g_i ≈ −(1/s) Σ_j v_jᵀ H_i w_j` for every pool point, from a shared `W`.
pub fn gradients_from_workspace(
    ctx: &FisherContext,
    probes: &[Vec<f64>],
    w: &[Vec<f64>],
) -> Vec<f64> {
    let s = w.len() as f64;
    (0..ctx.n_pool())
        .into_par_iter()
        .map(|i| {
            let (x, h) = ctx.pool_point(i);
            let sum: f64 = probes
                .iter()
                .zip(w)
                .map(|(v, wj)| hessian_bilinear(x, h, v, wj))
                .sum();
            -sum / s
        })
        .collect()
}

/// Hutchinson gradient estimate for the given probes. The workspace keeps
/// the intermediate products so the objective can be estimated for free.
pub fn estimate_gradients(
    ctx: &FisherContext,
    z: &[f64],
    probes: &[Vec<f64>],
    cfg: &RelaxConfig,
) -> Result<(Vec<f64>, HutchinsonWorkspace)> {
    if probes.is_empty() {
        return Err(Error::InvalidInput("need at least one probe".into()));
    }
    let ws = hutchinson_products(ctx, z, probes, probes.len(), cfg.pcg())?;
    Ok((gradients_from_workspace(ctx, probes, &ws.w), ws))
}

/// `(1/s) Σ_j v_jᵀ H_p Σ_z⁻¹ v_j`, an unbiased estimate of `Tr(Σ_z⁻¹ H_p)`.
pub fn estimate_objective(ws: &HutchinsonWorkspace, probes: &[Vec<f64>]) -> f64 {
    let sum: f64 = probes
        .iter()
        .zip(&ws.hp_sigma_inv_probes)
        .map(|(v, y)| dot(v, y))
        .sum();
    sum / probes.len() as f64
}

/// Entropic update `z_i ← z_i exp(−β g_i)` followed by renormalization.
/// The exponent is shifted by `min g`, which cancels in the normalization
/// and keeps every factor in `(0, 1]`.
pub fn mirror_step(z: &[f64], g: &[f64], beta: f64) -> Vec<f64> {
    assert_eq!(z.len(), g.len(), "mirror_step length mismatch");
    let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
    let next: Vec<f64> = z
        .iter()
        .zip(g)
        .map(|(zi, gi)| zi * (-beta * (gi - gmin)).exp())
        .collect();
    let total: f64 = next.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return z.to_vec();
    }
    next.into_iter().map(|v| v / total).collect()
}

fn check_budget(ctx: &FisherContext, b: usize) -> Result<()> {
    if b == 0 || b > ctx.n_pool() {
        return Err(Error::InvalidInput(format!(
            "budget {b} must be in 1..={}",
            ctx.n_pool()
        )));
    }
    Ok(())
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn record_simplex(trace: &mut RelaxTrace, z: &[f64]) {
    trace
        .simplex_min
        .push(z.iter().copied().fold(f64::INFINITY, f64::min));
    trace
        .simplex_sum_error
        .push((z.iter().sum::<f64>() - 1.0).abs());
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Mirror descent with Hutchinson gradients and preconditioned CG.
///
/// Gradient probes are redrawn each iteration. The objective used by the
/// stopping rule is estimated with a separate probe set drawn once, so the
/// relative change compares like with like.
pub fn relax_solve_fast(ctx: &FisherContext, b: usize, cfg: &RelaxConfig) -> Result<RelaxOutcome> {
    cfg.validate()?;
    check_budget(ctx, b)?;
    let n = ctx.n_pool();
    let scale = if cfg.scale_sigma_by_budget {
        b as f64
    } else {
        1.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let objective_probes = rademacher_fill(&mut rng, ctx.dim(), cfg.s);
    let mut z = vec![1.0 / n as f64; n];
    let mut trace = RelaxTrace::default();

    for t in 0..cfg.max_md_iters {
        let mut probes = rademacher_fill(&mut rng, ctx.dim(), cfg.s);
        probes.extend(objective_probes.iter().cloned());
        let ws = hutchinson_products(ctx, &sigma_weights(&z, scale), &probes, cfg.s, cfg.pcg())?;
        let g = gradients_from_workspace(ctx, &probes[..cfg.s], &ws.w);
        let objective = {
            let tail = &ws.hp_sigma_inv_probes[cfg.s..];
            let sum: f64 = objective_probes
                .iter()
                .zip(tail)
                .map(|(v, y)| dot(v, y))
                .sum();
            sum / cfg.s as f64
        };
        let gnorm = inf_norm(&g);
        trace.objectives.push(objective);
        trace.grad_inf_norms.push(gnorm);
        trace.cg_iterations.push(ws.cg_iterations);
        trace.cg_max_iter_hits.push(ws.cg_max_iter_hits);
        if t > 0 && relative_change(trace.objectives[t - 1], objective) < cfg.obj_rel_tol {
            trace.converged = true;
            break;
        }
        if gnorm == 0.0 {
            trace.converged = true;
            break;
        }
        let beta = cfg.beta0 / gnorm;
        z = mirror_step(&z, &g, beta);
        trace.betas.push(beta);
        record_simplex(&mut trace, &z);
    }
    Ok(RelaxOutcome {
        z_diamond: z.iter().map(|w| w * b as f64).collect(),
        trace,
    })
}

/// Mirror descent with dense exact gradients and objective.
pub fn relax_solve_exact(ctx: &FisherContext, b: usize, cfg: &RelaxConfig) -> Result<RelaxOutcome> {
    cfg.validate()?;
    check_budget(ctx, b)?;
    check_exact_cap(ctx)?;
    let n = ctx.n_pool();
    let scale = if cfg.scale_sigma_by_budget {
        b as f64
    } else {
        1.0
    };
    let f = |z: &[f64]| exact_objective(ctx, &sigma_weights(z, scale));
    let mut z = vec![1.0 / n as f64; n];
    let mut objective = f(&z)?;
    let mut trace = RelaxTrace::default();

    for t in 0..cfg.max_md_iters {
        trace.objectives.push(objective);
        if t > 0 && relative_change(trace.objectives[t - 1], objective) < cfg.obj_rel_tol {
            trace.converged = true;
            break;
        }
        let mut g = exact_gradient(ctx, &sigma_weights(&z, scale))?;
        // chain rule through the Σ_{b·z} scaling
        if scale != 1.0 {
            g.iter_mut().for_each(|v| *v *= scale);
        }
        let gnorm = inf_norm(&g);
        trace.grad_inf_norms.push(gnorm);
        trace.cg_iterations.push(0);
        trace.cg_max_iter_hits.push(0);
        if gnorm == 0.0 {
            trace.converged = true;
            break;
        }
        let mut beta = cfg.beta0 / gnorm;
        let mut next = mirror_step(&z, &g, beta);
        let mut next_obj = f(&next)?;
        if cfg.backtrack_exact {
            let mut halvings = 0;
            while next_obj > objective && halvings < 40 {
                beta *= 0.5;
                next = mirror_step(&z, &g, beta);
                next_obj = f(&next)?;
                halvings += 1;
            }
        }
        z = next;
        objective = next_obj;
        trace.betas.push(beta);
        record_simplex(&mut trace, &z);
    }
    Ok(RelaxOutcome {
        z_diamond: z.iter().map(|w| w * b as f64).collect(),
        trace,
    })
}
