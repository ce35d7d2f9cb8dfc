//! Rounding relaxed weights `z_⋄` into `b` concrete selections by
//! follow-the-regularized-leader regret minimization.
//!
//! With `Σ_⋄ = H_o + Σ z_⋄,i H_i` and `H̃ = Σ_⋄^{-1/2} H Σ_⋄^{-1/2}`, step `t`
//! picks the point minimizing `Tr[(A_t + (η/b) H̃_o + η H̃_i)⁻¹]`, where
//! `A_1 = √d̃ I` and `A_{t+1} = ν I + η H̃_acc` with `ν` normalizing
//! `Tr(A⁻²) = 1`.
//!
//! [`round_exact`] does this densely and is the oracle. [`DiagRounder`] keeps
//! only the `K` diagonal blocks of every Hessian. Then
//! `B_t = ν Σ_⋄ + η H_acc + (η/b) H_o` is block diagonal, and the argmin
//! becomes an argmax of a closed-form score per point, one `d × d` quadratic
//! form pair per class:
//!
//! ```text
//! score_i = Σ_k c_ik · xᵀ B_k⁻¹ Σ_k B_k⁻¹ x / (1 + η c_ik xᵀ B_k⁻¹ x),   c_ik = h_k(1 − h_k)
//! ```
//!
//! so that `Tr[(B_t + η H_i)⁻¹ Σ_⋄] = Tr[B_t⁻¹ Σ_⋄] − η·score_i`. The middle
//! factor is `Σ_k` itself: expanding the rank-one inverse inside the trace
//! leaves `xᵀB⁻¹ Σ B⁻¹x`, and with `Σ_k⁻¹` there the identity fails.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fisher::{
    block_coefficients, block_diag_sigma, dense_labeled_hessian, dense_sigma,
    labeled_block_hessians, sum_pool_block_hessians, FisherContext,
};
use crate::numkit::{
    cholesky_factor, cholesky_factor_ridged, find_nu, nu_residual, sym_eigen, sym_eigvals,
    BlockDiag, SymMatrix,
};

/// Largest `d̃` accepted by [`round_exact`].
pub const EXACT_ROUND_CAP: usize = 128;

const ETA_GRID_MULTIPLIERS: [f64; 6] = [0.1, 0.3, 1.0, 3.0, 10.0, 30.0];

/// `{0.1, 0.3, 1, 3, 10, 30}·√d̃ / b`.
pub fn default_eta_grid(dim: usize, b: usize) -> Vec<f64> {
    let base = (dim as f64).sqrt() / b as f64;
    ETA_GRID_MULTIPLIERS.iter().map(|m| m * base).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub b: usize,
    pub eta_grid: Vec<f64>,
    /// Let a point be picked more than once, as the algorithm is written.
    pub allow_repeats: bool,
}

impl RoundConfig {
    pub fn new(b: usize, dim: usize) -> Self {
        Self {
            b,
            eta_grid: default_eta_grid(dim, b),
            allow_repeats: false,
        }
    }
}

/// Inverse of `A + γ x xᵀ` given `A⁻¹`.
pub fn sm_block_update(a_inv: &SymMatrix, gamma: f64, x: &[f64]) -> Result<SymMatrix> {
    check_len(a_inv.dim(), x.len())?;
    if gamma == 0.0 {
        return Ok(a_inv.clone());
    }
    let u = a_inv.mul_vec(x);
    let denom = 1.0 + gamma * x.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::DenominatorNonpositive(denom));
    }
    let mut out = a_inv.clone();
    out.add_outer(-gamma / denom, &u);
    Ok(out)
}

/// Adds the standard ridge to any block that does not factor.
fn repair_blocks(blocks: BlockDiag) -> Result<BlockDiag> {
    let mut out = Vec::with_capacity(blocks.num_blocks());
    for mut b in blocks.into_blocks() {
        let (_, ridge) = cholesky_factor_ridged(&b)?;
        if ridge > 0.0 {
            b.add_diagonal(ridge);
        }
        out.push(b);
    }
    BlockDiag::from_blocks(out)
}

fn map_blocks(
    blocks: &BlockDiag,
    f: impl Fn(&SymMatrix) -> Result<SymMatrix> + Sync + Send,
) -> Result<BlockDiag> {
    let mapped = blocks
        .blocks()
        .par_iter()
        .map(f)
        .collect::<Result<Vec<_>>>()?;
    BlockDiag::from_blocks(mapped)
}

fn inverse_spd(a: &SymMatrix) -> Result<SymMatrix> {
    Ok(cholesky_factor(a)?.inverse())
}

fn inverse_sqrt_spd(a: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eigen(a)?;
    if eig.values.first().is_some_and(|&l| l <= 0.0) {
        return Err(Error::SingularSigma);
    }
    Ok(eig.map_spectrum(|l| 1.0 / l.sqrt()))
}

/// Score of every pool point given `B⁻¹` and `Σ_⋄` blocks. Larger is
/// better.
pub fn prop1_scores(
    ctx: &FisherContext,
    b_inv: &BlockDiag,
    sigma: &BlockDiag,
    eta: f64,
) -> Result<Vec<f64>> {
    check_len(ctx.num_blocks(), b_inv.num_blocks())?;
    check_len(ctx.num_blocks(), sigma.num_blocks())?;
    let m: Vec<SymMatrix> = b_inv
        .blocks()
        .iter()
        .zip(sigma.blocks())
        .map(|(bi, s)| bi.sandwich(s))
        .collect();
    Ok(scores_with(ctx, b_inv, &m, eta))
}

fn scores_with(ctx: &FisherContext, b_inv: &BlockDiag, m: &[SymMatrix], eta: f64) -> Vec<f64> {
    (0..ctx.n_pool())
        .into_par_iter()
        .map(|j| {
            let (x, h) = ctx.pool_point(j);
            block_coefficients(h)
                .enumerate()
                .filter(|(_, c)| *c != 0.0)
                .map(|(k, c)| c * m[k].quad_form(x) / (1.0 + eta * c * b_inv.block(k).quad_form(x)))
                .sum()
        })
        .collect()
}

/// Lowest-index argmax over the candidates still allowed.
fn argmax_available(scores: &[f64], taken: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &s) in scores.iter().enumerate() {
        if taken[j] || s.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best.map(|(j, _)| j)
}

/// Result of one rounding pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// Pool positions in selection order.
    pub selected: Vec<usize>,
    pub eta: f64,
    /// `ν_{t+1}` after each selection.
    pub nu_trace: Vec<f64>,
    /// `Σ(ν + ηλ)⁻² − 1` at each recorded `ν`.
    pub nu_residuals: Vec<f64>,
    /// Per-class `H` accumulated by the loop, including the `(1/b) H_o`
    /// share added at every step.
    pub accumulated: BlockDiag,
    /// Per-class sums of the selected points' blocks only.
    pub selected_blocks: BlockDiag,
}

impl RoundOutcome {
    /// `min_k λ_min` of the selected points' summed blocks.
    pub fn min_block_eigenvalue(&self) -> Result<f64> {
        let mut m = f64::INFINITY;
        for b in self.selected_blocks.blocks() {
            m = m.min(sym_eigvals(b)?.first().copied().unwrap_or(0.0));
        }
        Ok(m)
    }
}

/// The block-diagonal rounding loop, one selection per [`DiagRounder::step`].
pub struct DiagRounder<'a> {
    ctx: &'a FisherContext,
    eta: f64,
    b: usize,
    allow_repeats: bool,
    sigma: BlockDiag,
    sigma_inv_sqrt: BlockDiag,
    labeled: BlockDiag,
    accumulated: BlockDiag,
    selected_blocks: BlockDiag,
    b_inv: BlockDiag,
    selected: Vec<usize>,
    taken: Vec<bool>,
    nu_trace: Vec<f64>,
    nu_residuals: Vec<f64>,
}

impl<'a> DiagRounder<'a> {
    pub fn new(
        ctx: &'a FisherContext,
        z_diamond: &[f64],
        b: usize,
        eta: f64,
        allow_repeats: bool,
    ) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidInput(format!("eta {eta} must be positive")));
        }
        if b == 0 || (!allow_repeats && b > ctx.n_pool()) || ctx.n_pool() == 0 {
            return Err(Error::InvalidInput(format!(
                "budget {b} does not fit a pool of {}",
                ctx.n_pool()
            )));
        }
        let sigma = repair_blocks(block_diag_sigma(ctx, z_diamond)?)?;
        let sigma_inv_sqrt = map_blocks(&sigma, inverse_sqrt_spd)?;
        let labeled = labeled_block_hessians(ctx);
        let root_dim = (ctx.dim() as f64).sqrt();
        let share = eta / b as f64;
        let b_inv = BlockDiag::from_blocks(
            sigma
                .blocks()
                .iter()
                .zip(labeled.blocks())
                .map(|(s, ho)| {
                    let mut m = s.scaled(root_dim);
                    m.add_scaled(share, ho);
                    inverse_spd(&m)
                })
                .collect::<Result<_>>()?,
        )?;
        let (kk, d) = (ctx.num_blocks(), ctx.d());
        Ok(Self {
            ctx,
            eta,
            b,
            allow_repeats,
            sigma,
            sigma_inv_sqrt,
            labeled,
            accumulated: BlockDiag::zeros(kk, d),
            selected_blocks: BlockDiag::zeros(kk, d),
            b_inv,
            selected: Vec::with_capacity(b),
            taken: vec![false; ctx.n_pool()],
            nu_trace: Vec::with_capacity(b),
            nu_residuals: Vec::with_capacity(b),
        })
    }

    /// Blocks of `Σ_⋄` after any ridge repair.
    pub fn sigma(&self) -> &BlockDiag {
        &self.sigma
    }

    /// Current `B_t⁻¹` blocks.
    pub fn b_inv(&self) -> &BlockDiag {
        &self.b_inv
    }

    pub fn accumulated(&self) -> &BlockDiag {
        &self.accumulated
    }

    pub fn labeled_blocks(&self) -> &BlockDiag {
        &self.labeled
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn is_done(&self) -> bool {
        self.selected.len() >= self.b
    }

    /// Current ν (`√d̃` before the first step).
    pub fn nu(&self) -> f64 {
        self.nu_trace
            .last()
            .copied()
            .unwrap_or((self.ctx.dim() as f64).sqrt())
    }

    pub fn scores(&self) -> Vec<f64> {
        let m: Vec<SymMatrix> = self
            .b_inv
            .blocks()
            .iter()
            .zip(self.sigma.blocks())
            .map(|(bi, s)| bi.sandwich(s))
            .collect();
        scores_with(self.ctx, &self.b_inv, &m, self.eta)
    }

    /// `Tr[B_t⁻¹ Σ_⋄]`, the score-independent part of each candidate's
    /// objective.
    pub fn base_trace(&self) -> f64 {
        self.b_inv
            .blocks()
            .iter()
            .zip(self.sigma.blocks())
            .map(|(bi, s)| {
                bi.as_slice()
                    .iter()
                    .zip(s.as_slice())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Selects the next point and updates the state. Returns its pool
    /// position.
    pub fn step(&mut self) -> Result<usize> {
        if self.is_done() {
            return Err(Error::InvalidInput("rounding budget already spent".into()));
        }
        let scores = self.scores();
        let j = argmax_available(&scores, &self.taken)
            .ok_or_else(|| Error::InvalidInput("no candidates left in the pool".into()))?;
        if !self.allow_repeats {
            self.taken[j] = true;
        }
        self.selected.push(j);

        let (x, h) = self.ctx.pool_point(j);
        let share = 1.0 / self.b as f64;
        for (k, c) in block_coefficients(h).enumerate() {
            let acc = self.accumulated.block_mut(k);
            acc.add_scaled(share, self.labeled.block(k));
            acc.add_outer(c, x);
            self.selected_blocks.block_mut(k).add_outer(c, x);
        }

        let spectra = self
            .accumulated
            .blocks()
            .par_iter()
            .zip(self.sigma_inv_sqrt.blocks())
            .map(|(acc, r)| sym_eigvals(&r.sandwich(acc)))
            .collect::<Result<Vec<_>>>()?;
        let eig: Vec<f64> = spectra.into_iter().flatten().collect();
        let nu = find_nu(&eig, self.eta);
        self.nu_trace.push(nu);
        self.nu_residuals.push(nu_residual(&eig, self.eta, nu));

        let share_eta = self.eta / self.b as f64;
        let eta = self.eta;
        let rebuilt = self
            .sigma
            .blocks()
            .par_iter()
            .zip(self.accumulated.blocks())
            .zip(self.labeled.blocks())
            .map(|((s, acc), ho)| {
                let mut m = s.scaled(nu);
                m.add_scaled(eta, acc);
                m.add_scaled(share_eta, ho);
                inverse_spd(&m)
            })
            .collect::<Result<Vec<_>>>()?;
        self.b_inv = BlockDiag::from_blocks(rebuilt)?;
        Ok(j)
    }

    pub fn finish(self) -> RoundOutcome {
        RoundOutcome {
            selected: self.selected,
            eta: self.eta,
            nu_trace: self.nu_trace,
            nu_residuals: self.nu_residuals,
            accumulated: self.accumulated,
            selected_blocks: self.selected_blocks,
        }
    }
}

/// Block-diagonal rounding: `cfg.b` selections at learning rate `eta`.
pub fn round_diag(
    ctx: &FisherContext,
    z_diamond: &[f64],
    cfg: &RoundConfig,
    eta: f64,
) -> Result<RoundOutcome> {
    let mut r = DiagRounder::new(ctx, z_diamond, cfg.b, eta, cfg.allow_repeats)?;
    while !r.is_done() {
        r.step()?;
    }
    Ok(r.finish())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExactRoundOptions {
    /// Truncate every Hessian to its diagonal blocks first.
    pub block_diagonal: bool,
    pub allow_repeats: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRoundOutcome {
    pub selected: Vec<usize>,
    /// Winning objective `Tr[(A_t + (η/b)H̃_o + ηH̃_i)⁻¹]` at each step.
    pub objectives: Vec<f64>,
    pub nu_trace: Vec<f64>,
    pub nu_residuals: Vec<f64>,
}

/// Dense rounding in the transformed space.
pub fn round_exact(
    ctx: &FisherContext,
    z_diamond: &[f64],
    eta: f64,
    b: usize,
    opts: ExactRoundOptions,
) -> Result<ExactRoundOutcome> {
    let n = ctx.dim();
    if n > EXACT_ROUND_CAP {
        return Err(Error::SizeCap {
            size: n,
            cap: EXACT_ROUND_CAP,
        });
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidInput(format!("eta {eta} must be positive")));
    }
    if b == 0 || (!opts.allow_repeats && b > ctx.n_pool()) || ctx.n_pool() == 0 {
        return Err(Error::InvalidInput(format!(
            "budget {b} does not fit a pool of {}",
            ctx.n_pool()
        )));
    }
    let (d, kk) = (ctx.d(), ctx.num_blocks());

    let (sigma, labeled) = if opts.block_diagonal {
        let s = repair_blocks(block_diag_sigma(ctx, z_diamond)?)?;
        (s.to_dense(), labeled_block_hessians(ctx).to_dense())
    } else {
        let mut s = dense_sigma(ctx, z_diamond)?;
        let (_, ridge) = cholesky_factor_ridged(&s)?;
        if ridge > 0.0 {
            s.add_diagonal(ridge);
        }
        (s, dense_labeled_hessian(ctx)?)
    };
    let root = inverse_sqrt_spd(&sigma)?;
    let labeled_t = root.sandwich(&labeled);

    // H̃_i = Σ_kl C_kl y_k y_lᵀ with y_k = Σ^{-1/2}(e_k ⊗ x) and
    // C = diag(h) − h hᵀ (off-diagonal terms dropped when truncating)
    let transformed = |j: usize| -> SymMatrix {
        let (x, h) = ctx.pool_point(j);
        let y: Vec<Vec<f64>> = (0..kk)
            .map(|k| {
                (0..n)
                    .map(|r| {
                        root.row(r)[k * d..(k + 1) * d]
                            .iter()
                            .zip(x)
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let mut m = SymMatrix::zeros(n);
        for k in 0..kk {
            for l in 0..kk {
                let c = if k == l {
                    h[k] * (1.0 - h[k])
                } else if opts.block_diagonal {
                    0.0
                } else {
                    -h[k] * h[l]
                };
                if c == 0.0 {
                    continue;
                }
                let data = m.data_mut();
                for r in 0..n {
                    let cy = c * y[k][r];
                    for (e, &yl) in data[r * n..(r + 1) * n].iter_mut().zip(&y[l]) {
                        *e += cy * yl;
                    }
                }
            }
        }
        m
    };

    let share = 1.0 / b as f64;
    let mut a = SymMatrix::identity(n).scaled((n as f64).sqrt());
    let mut acc = SymMatrix::zeros(n);
    let mut taken = vec![false; ctx.n_pool()];
    let mut out = ExactRoundOutcome {
        selected: Vec::with_capacity(b),
        objectives: Vec::with_capacity(b),
        nu_trace: Vec::with_capacity(b),
        nu_residuals: Vec::with_capacity(b),
    };

    for _ in 0..b {
        let mut base = a.clone();
        base.add_scaled(eta * share, &labeled_t);
        let objectives: Vec<f64> = (0..ctx.n_pool())
            .into_par_iter()
            .map(|j| {
                if taken[j] {
                    return Ok(f64::INFINITY);
                }
                let mut m = base.clone();
                m.add_scaled(eta, &transformed(j));
                Ok(cholesky_factor(&m)?.inverse().trace())
            })
            .collect::<Result<_>>()?;
        let mut best: Option<(usize, f64)> = None;
        for (j, &r) in objectives.iter().enumerate() {
            if !taken[j] && best.is_none_or(|(_, v)| r < v) {
                best = Some((j, r));
            }
        }
        let (j, r) =
            best.ok_or_else(|| Error::InvalidInput("no candidates left in the pool".into()))?;
        if !opts.allow_repeats {
            taken[j] = true;
        }
        out.selected.push(j);
        out.objectives.push(r);

        acc.add_scaled(share, &labeled_t);
        acc.add_scaled(1.0, &transformed(j));
        let eig = sym_eigen(&acc)?;
        let nu = find_nu(&eig.values, eta);
        out.nu_trace.push(nu);
        out.nu_residuals.push(nu_residual(&eig.values, eta, nu));
        a = eig.map_spectrum(|l| nu + eta * l);
    }
    Ok(out)
}

/// Outcome of a sweep over candidate learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaTuning {
    pub eta: f64,
    /// `min_k λ_min` of the selected blocks, per grid entry.
    pub min_eigenvalues: Vec<f64>,
    pub outcomes: Vec<RoundOutcome>,
}

impl EtaTuning {
    pub fn best(&self) -> &RoundOutcome {
        let i = self
            .outcomes
            .iter()
            .position(|o| o.eta == self.eta)
            .expect("chosen eta was run");
        &self.outcomes[i]
    }
}

/// Runs [`round_diag`] for each η in the grid and keeps the one whose
/// selection maximizes `min_k λ_min` of the selected blocks. Ties go to the
/// smaller η.
pub fn tune_eta(ctx: &FisherContext, z_diamond: &[f64], cfg: &RoundConfig) -> Result<EtaTuning> {
    if cfg.eta_grid.is_empty() {
        return Err(Error::InvalidInput("eta grid is empty".into()));
    }
    let mut outcomes = Vec::with_capacity(cfg.eta_grid.len());
    let mut mins = Vec::with_capacity(cfg.eta_grid.len());
    for &eta in &cfg.eta_grid {
        let o = round_diag(ctx, z_diamond, cfg, eta)?;
        mins.push(o.min_block_eigenvalue()?);
        outcomes.push(o);
    }
    let mut best = 0;
    for i in 1..mins.len() {
        let (e, be) = (cfg.eta_grid[i], cfg.eta_grid[best]);
        if mins[i] > mins[best] || (mins[i] == mins[best] && e < be) {
            best = i;
        }
    }
    Ok(EtaTuning {
        eta: cfg.eta_grid[best],
        min_eigenvalues: mins,
        outcomes,
    })
}

/// Exact-rounding counterpart of [`tune_eta`]: same grid, same criterion.
pub fn tune_eta_exact(
    ctx: &FisherContext,
    z_diamond: &[f64],
    cfg: &RoundConfig,
    block_diagonal: bool,
) -> Result<(f64, ExactRoundOutcome)> {
    if cfg.eta_grid.is_empty() {
        return Err(Error::InvalidInput("eta grid is empty".into()));
    }
    let opts = ExactRoundOptions {
        block_diagonal,
        allow_repeats: cfg.allow_repeats,
    };
    let mut best: Option<(f64, f64, ExactRoundOutcome)> = None;
    for &eta in &cfg.eta_grid {
        let o = round_exact(ctx, z_diamond, eta, cfg.b, opts)?;
        let blocks = sum_pool_block_hessians(ctx, &o.selected, None)?;
        let mut m = f64::INFINITY;
        for blk in blocks.blocks() {
            m = m.min(sym_eigvals(blk)?.first().copied().unwrap_or(0.0));
        }
        let better = match &best {
            None => true,
            Some((be, bm, _)) => m > *bm || (m == *bm && eta < *be),
        };
        if better {
            best = Some((eta, m, o));
        }
    }
    let (eta, _, o) = best.expect("grid is non-empty");
    Ok((eta, o))
}
