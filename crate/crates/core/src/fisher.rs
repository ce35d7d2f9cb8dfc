//! Fisher information operators for multiclass logistic regression.
//!
//! The per-point Fisher matrix is `H_i = [diag(h_i) − h_i h_iᵀ] ⊗ (x_i x_iᵀ)`,
//! a `d̃ × d̃` matrix with `d̃ = d·K`. Vectors of length `d̃` are the column
//! stacking of a `d × K` matrix `V`, so class `k` owns entries
//! `k·d .. (k+1)·d`.
//!
//! `H_i v` is evaluated without forming `H_i`:
//!
//! ```text
//! γ ← Vᵀ x      (K dot products)
//! α ← γᵀ h
//! γ ← (γ − α) ⊙ h
//! H_i v = vec(x γᵀ)   (column k is γ_k x)
//! ```
//!
//! which needs `K + 1` scalars of workspace beyond the output. Pooled sums
//! over points are split into fixed-size chunks, reduced in parallel and
//! combined by pairwise summation in chunk order, so results are bitwise
//! reproducible regardless of the thread count.

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::logistic::ClassProbTable;
use crate::numkit::{BlockDiag, LinearOperator, Matrix, SymMatrix};

/// Largest `d̃` for which dense `d̃ × d̃` Fisher matrices are built.
pub const DENSE_HESSIAN_CAP: usize = 512;

const CHUNK: usize = 256;

/// Features, cached class probabilities and the labeled / pool split.
#[derive(Debug, Clone)]
pub struct FisherContext {
    features: Matrix,
    probs: ClassProbTable,
    labeled: Vec<usize>,
    pool: Vec<usize>,
}

impl FisherContext {
    pub fn new(
        features: Matrix,
        probs: ClassProbTable,
        labeled: Vec<usize>,
        pool: Vec<usize>,
    ) -> Result<Self> {
        let n = features.nrows();
        check_len(n, probs.len())?;
        if probs.free_classes() == 0 {
            return Err(Error::InvalidInput("need at least one free class".into()));
        }
        let mut seen = vec![false; n];
        for &i in labeled.iter().chain(&pool) {
            if i >= n {
                return Err(Error::InvalidInput(format!(
                    "index {i} out of range for {n} points"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidInput(format!(
                    "index {i} listed twice across labeled and pool sets"
                )));
            }
            seen[i] = true;
        }
        Ok(Self {
            features,
            probs,
            labeled,
            pool,
        })
    }

    /// Feature dimension `d`.
    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Number of blocks `K = c − 1`.
    pub fn num_blocks(&self) -> usize {
        self.probs.free_classes()
    }

    /// Stacked dimension `d̃ = d·K`.
    pub fn dim(&self) -> usize {
        self.d() * self.num_blocks()
    }

    pub fn n_pool(&self) -> usize {
        self.pool.len()
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn probs(&self) -> &ClassProbTable {
        &self.probs
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    /// `(x, h)` of the `j`-th pool point.
    #[inline]
    pub fn pool_point(&self, j: usize) -> (&[f64], &[f64]) {
        let i = self.pool[j];
        (self.features.row(i), self.probs.h(i))
    }

    #[inline]
    pub fn labeled_point(&self, j: usize) -> (&[f64], &[f64]) {
        let i = self.labeled[j];
        (self.features.row(i), self.probs.h(i))
    }

    fn check_pool_weights(&self, z: &[f64]) -> Result<()> {
        check_len(self.n_pool(), z.len())?;
        if let Some(w) = z.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "pool weight {w} is not a finite non-negative value"
            )));
        }
        Ok(())
    }
}

/// A `d̃`-vector viewed as the column stacking of a `d × K` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedVec {
    d: usize,
    k: usize,
    data: Vec<f64>,
}

impl StackedVec {
    pub fn zeros(d: usize, k: usize) -> Self {
        Self {
            d,
            k,
            data: vec![0.0; d * k],
        }
    }

    pub fn from_vec(d: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        check_len(d * k, data.len())?;
        Ok(Self { d, k, data })
    }

    /// Stacks the columns of a `d × K` matrix given column by column.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let d = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(d * columns.len());
        for c in columns {
            check_len(d, c.len())?;
            data.extend_from_slice(c);
        }
        Ok(Self {
            d,
            k: columns.len(),
            data,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.data[k * self.d..(k + 1) * self.d]
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.k).map(|k| self.column(k).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// `out += weight · H v` for one point, following the four-step schedule.
/// `gamma` must hold `K` entries and is overwritten.
#[inline]
pub fn add_hessian_matvec(
    x: &[f64],
    h: &[f64],
    v: &[f64],
    weight: f64,
    out: &mut [f64],
    gamma: &mut [f64],
) {
    let d = x.len();
    for (k, g) in gamma.iter_mut().enumerate() {
        *g = x
            .iter()
            .zip(&v[k * d..(k + 1) * d])
            .map(|(a, b)| a * b)
            .sum();
    }
    let alpha: f64 = gamma.iter().zip(h).map(|(g, hk)| g * hk).sum();
    for (k, g) in gamma.iter_mut().enumerate() {
        let gk = weight * (*g - alpha) * h[k];
        if gk != 0.0 {
            for (o, &xa) in out[k * d..(k + 1) * d].iter_mut().zip(x) {
                *o += gk * xa;
            }
        }
    }
}

/// `vᵀ H w` for one point, in `O(dK)` without forming `H w`.
#[inline]
pub fn hessian_bilinear(x: &[f64], h: &[f64], v: &[f64], w: &[f64]) -> f64 {
    let d = x.len();
    let mut xw_dot_h = 0.0;
    let mut acc_vw = 0.0;
    let mut acc_v = 0.0;
    for (k, &hk) in h.iter().enumerate() {
        let xv: f64 = x
            .iter()
            .zip(&v[k * d..(k + 1) * d])
            .map(|(a, b)| a * b)
            .sum();
        let xw: f64 = x
            .iter()
            .zip(&w[k * d..(k + 1) * d])
            .map(|(a, b)| a * b)
            .sum();
        xw_dot_h += xw * hk;
        acc_vw += xv * xw * hk;
        acc_v += xv * hk;
    }
    // Σ_k (xᵀv_k) (xᵀw_k − α) h_k with α = Σ_l (xᵀw_l) h_l
    acc_vw - xw_dot_h * acc_v
}

pub fn hessian_matvec(x: &[f64], h: &[f64], v: &StackedVec) -> Result<StackedVec> {
    check_len(x.len(), v.d)?;
    check_len(h.len(), v.k)?;
    let mut out = StackedVec::zeros(v.d, v.k);
    let mut gamma = vec![0.0; v.k];
    add_hessian_matvec(x, h, &v.data, 1.0, &mut out.data, &mut gamma);
    Ok(out)
}

/// Explicit Kronecker product `[diag(h) − h hᵀ] ⊗ (x xᵀ)`. Oracle use only.
pub fn dense_hessian(x: &[f64], h: &[f64]) -> Result<SymMatrix> {
    let n = x.len() * h.len();
    if n > DENSE_HESSIAN_CAP {
        return Err(Error::SizeCap {
            size: n,
            cap: DENSE_HESSIAN_CAP,
        });
    }
    let mut m = SymMatrix::zeros(n);
    add_dense_hessian(&mut m, x, h, 1.0);
    Ok(m)
}

fn add_dense_hessian(m: &mut SymMatrix, x: &[f64], h: &[f64], weight: f64) {
    let d = x.len();
    let n = m.dim();
    let data = m.data_mut();
    for (k, &hk) in h.iter().enumerate() {
        for (l, &hl) in h.iter().enumerate() {
            let c = weight * (if k == l { hk } else { 0.0 } - hk * hl);
            if c == 0.0 {
                continue;
            }
            for a in 0..d {
                let cxa = c * x[a];
                let row = &mut data[(k * d + a) * n + l * d..(k * d + a) * n + (l + 1) * d];
                for (r, &xb) in row.iter_mut().zip(x) {
                    *r += cxa * xb;
                }
            }
        }
    }
}

/// Reduces `f(item, acc, scratch)` over `0..count` into a length-`len`
/// accumulator, deterministically.
fn reduce_points<F>(count: usize, len: usize, scratch_len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync,
{
    let run = |range: std::ops::Range<usize>| {
        let mut acc = vec![0.0; len];
        let mut scratch = vec![0.0; scratch_len];
        for i in range {
            f(i, &mut acc, &mut scratch);
        }
        acc
    };
    if count <= CHUNK {
        return run(0..count);
    }
    let parts: Vec<Vec<f64>> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| run(c * CHUNK..((c + 1) * CHUNK).min(count)))
        .collect();
    pairwise_sum(parts)
}

fn pairwise_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// Weighted Fisher sum `Σ_{X_o} H_i + Σ_{X_u} w_i H_i` as a matrix-free
/// operator. With `labeled = false` and unit weights it is `H_p`; with
/// `labeled = true` and weights `z` it is `Σ_z`.
#[derive(Clone, Copy)]
pub struct HessianSumOperator<'a> {
    ctx: &'a FisherContext,
    pool_weights: Option<&'a [f64]>,
    labeled: bool,
}

impl<'a> HessianSumOperator<'a> {
    /// `H_p = Σ_{i∈X_u} H_i`.
    pub fn pool(ctx: &'a FisherContext) -> Self {
        Self {
            ctx,
            pool_weights: None,
            labeled: false,
        }
    }

    /// `H_o = Σ_{i∈X_o} H_i`.
    pub fn labeled(ctx: &'a FisherContext) -> Self {
        Self {
            ctx,
            pool_weights: Some(&[]),
            labeled: true,
        }
    }

    /// `Σ_z = H_o + Σ_{i∈X_u} z_i H_i`.
    pub fn sigma(ctx: &'a FisherContext, z: &'a [f64]) -> Result<Self> {
        ctx.check_pool_weights(z)?;
        Ok(Self {
            ctx,
            pool_weights: Some(z),
            labeled: true,
        })
    }

    fn item(&self, i: usize) -> Option<(&'a [f64], &'a [f64], f64)> {
        let n_lab = if self.labeled {
            self.ctx.n_labeled()
        } else {
            0
        };
        if i < n_lab {
            let (x, h) = self.ctx.labeled_point(i);
            return Some((x, h, 1.0));
        }
        let j = i - n_lab;
        let w = match self.pool_weights {
            None => 1.0,
            Some(ws) if ws.is_empty() => return None,
            Some(ws) => ws[j],
        };
        if w == 0.0 {
            return None;
        }
        let (x, h) = self.ctx.pool_point(j);
        Some((x, h, w))
    }

    fn count(&self) -> usize {
        let n_lab = if self.labeled {
            self.ctx.n_labeled()
        } else {
            0
        };
        match self.pool_weights {
            Some(ws) if ws.is_empty() => n_lab,
            _ => n_lab + self.ctx.n_pool(),
        }
    }
}

impl HessianSumOperator<'_> {
    /// Applies the operator to several columns in one pass over the points.
    pub fn apply_many(&self, cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.ctx.dim();
        let s = cols.len();
        let k = self.ctx.num_blocks();
        let acc = reduce_points(self.count(), n * s, k, |i, acc, gamma| {
            if let Some((p, h, w)) = self.item(i) {
                for (j, c) in cols.iter().enumerate() {
                    add_hessian_matvec(p, h, c, w, &mut acc[j * n..(j + 1) * n], gamma);
                }
            }
        });
        acc.chunks(n.max(1)).take(s).map(<[f64]>::to_vec).collect()
    }
}

impl LinearOperator for HessianSumOperator<'_> {
    fn dim(&self) -> usize {
        self.ctx.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let k = self.ctx.num_blocks();
        let acc = reduce_points(self.count(), self.dim(), k, |i, acc, gamma| {
            if let Some((p, h, w)) = self.item(i) {
                add_hessian_matvec(p, h, x, w, acc, gamma);
            }
        });
        y.copy_from_slice(&acc);
    }
}

/// Wraps an operator with a per-block diagonal shift `ε_k I`, matching the
/// ridge a block preconditioner added when a block of `Σ_z` was singular.
pub struct BlockShiftedOperator<A> {
    inner: A,
    block_dim: usize,
    shifts: Vec<f64>,
}

impl<A: LinearOperator> BlockShiftedOperator<A> {
    pub fn new(inner: A, block_dim: usize, shifts: Vec<f64>) -> Result<Self> {
        check_len(inner.dim(), block_dim * shifts.len())?;
        Ok(Self {
            inner,
            block_dim,
            shifts,
        })
    }
}

impl<A: LinearOperator> LinearOperator for BlockShiftedOperator<A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.inner.apply(x, y);
        let d = self.block_dim;
        for (k, &eps) in self.shifts.iter().enumerate() {
            if eps != 0.0 {
                for (yi, xi) in y[k * d..(k + 1) * d].iter_mut().zip(&x[k * d..(k + 1) * d]) {
                    *yi += eps * xi;
                }
            }
        }
    }
}

/// `H_p v`.
pub fn hp_matvec(ctx: &FisherContext, v: &[f64]) -> Result<Vec<f64>> {
    check_len(ctx.dim(), v.len())?;
    Ok(HessianSumOperator::pool(ctx).apply_vec(v))
}

/// `Σ_z v` with `Σ_z = H_o + Σ_{i∈X_u} z_i H_i`.
pub fn sigma_matvec(ctx: &FisherContext, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_len(ctx.dim(), v.len())?;
    Ok(HessianSumOperator::sigma(ctx, z)?.apply_vec(v))
}

/// Accumulates `Σ w · h_k(1 − h_k) x xᵀ` per class block.
fn accumulate_blocks<'a, I>(ctx: &FisherContext, count: usize, item: I) -> BlockDiag
where
    I: Fn(usize) -> Option<(&'a [f64], &'a [f64], f64)> + Sync,
{
    let d = ctx.d();
    let kk = ctx.num_blocks();
    let bsz = d * d;
    let acc = reduce_points(count, kk * bsz, 0, |i, acc, _| {
        let Some((x, h, w)) = item(i) else { return };
        for (k, &hk) in h.iter().enumerate() {
            let c = w * hk * (1.0 - hk);
            if c == 0.0 {
                continue;
            }
            let blk = &mut acc[k * bsz..(k + 1) * bsz];
            for a in 0..d {
                let ca = c * x[a];
                // upper triangle only; mirrored below
                for (r, &xb) in blk[a * d + a..(a + 1) * d].iter_mut().zip(&x[a..]) {
                    *r += ca * xb;
                }
            }
        }
    });
    let blocks = (0..kk)
        .map(|k| {
            let mut data = acc[k * bsz..(k + 1) * bsz].to_vec();
            for a in 0..d {
                for b in 0..a {
                    data[a * d + b] = data[b * d + a];
                }
            }
            SymMatrix::from_row_major(d, data).expect("mirrored blocks are symmetric")
        })
        .collect();
    BlockDiag::from_blocks(blocks).expect("uniform block size")
}

/// Diagonal blocks of `Σ_z`: block `k` is
/// `Σ_{X_o} h^k(1−h^k) x xᵀ + Σ_{X_u} z_i h^k(1−h^k) x xᵀ`.
pub fn block_diag_sigma(ctx: &FisherContext, z: &[f64]) -> Result<BlockDiag> {
    ctx.check_pool_weights(z)?;
    let n_lab = ctx.n_labeled();
    Ok(accumulate_blocks(ctx, n_lab + ctx.n_pool(), |i| {
        if i < n_lab {
            let (x, h) = ctx.labeled_point(i);
            Some((x, h, 1.0))
        } else {
            let (x, h) = ctx.pool_point(i - n_lab);
            Some((x, h, z[i - n_lab]))
        }
    }))
}

/// Diagonal blocks of `H_o`.
pub fn labeled_block_hessians(ctx: &FisherContext) -> BlockDiag {
    accumulate_blocks(ctx, ctx.n_labeled(), |i| {
        let (x, h) = ctx.labeled_point(i);
        Some((x, h, 1.0))
    })
}

/// Per-class block sums over a subset of pool positions, optionally
/// weighted (`weights[j]` pairs with `subset[j]`).
pub fn sum_pool_block_hessians(
    ctx: &FisherContext,
    subset: &[usize],
    weights: Option<&[f64]>,
) -> Result<BlockDiag> {
    if let Some(&bad) = subset.iter().find(|&&j| j >= ctx.n_pool()) {
        return Err(Error::InvalidInput(format!(
            "pool position {bad} out of range"
        )));
    }
    if let Some(w) = weights {
        check_len(subset.len(), w.len())?;
    }
    Ok(accumulate_blocks(ctx, subset.len(), |j| {
        let (x, h) = ctx.pool_point(subset[j]);
        Some((x, h, weights.map_or(1.0, |w| w[j])))
    }))
}

/// `(h^k(1 − h^k))_k` for one point: the scale of its `k`-th diagonal block.
#[inline]
pub fn block_coefficients(h: &[f64]) -> impl Iterator<Item = f64> + '_ {
    h.iter().map(|&hk| hk * (1.0 - hk))
}

fn check_dense_cap(ctx: &FisherContext) -> Result<()> {
    if ctx.dim() > DENSE_HESSIAN_CAP {
        return Err(Error::SizeCap {
            size: ctx.dim(),
            cap: DENSE_HESSIAN_CAP,
        });
    }
    Ok(())
}

/// Dense `H_p`.
pub fn dense_pool_hessian(ctx: &FisherContext) -> Result<SymMatrix> {
    check_dense_cap(ctx)?;
    let mut m = SymMatrix::zeros(ctx.dim());
    for j in 0..ctx.n_pool() {
        let (x, h) = ctx.pool_point(j);
        add_dense_hessian(&mut m, x, h, 1.0);
    }
    Ok(m)
}

/// Dense `H_o`.
pub fn dense_labeled_hessian(ctx: &FisherContext) -> Result<SymMatrix> {
    check_dense_cap(ctx)?;
    let mut m = SymMatrix::zeros(ctx.dim());
    for j in 0..ctx.n_labeled() {
        let (x, h) = ctx.labeled_point(j);
        add_dense_hessian(&mut m, x, h, 1.0);
    }
    Ok(m)
}

/// Dense `Σ_z = H_o + Σ z_i H_i`.
pub fn dense_sigma(ctx: &FisherContext, z: &[f64]) -> Result<SymMatrix> {
    ctx.check_pool_weights(z)?;
    let mut m = dense_labeled_hessian(ctx)?;
    for (j, &w) in z.iter().enumerate() {
        if w != 0.0 {
            let (x, h) = ctx.pool_point(j);
            add_dense_hessian(&mut m, x, h, w);
        }
    }
    Ok(m)
}

/// Dense Fisher matrix of the `j`-th pool point.
pub fn dense_pool_point_hessian(ctx: &FisherContext, j: usize) -> Result<SymMatrix> {
    let (x, h) = ctx.pool_point(j);
    dense_hessian(x, h)
}
