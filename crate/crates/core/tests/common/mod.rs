#![allow(dead_code)]

use firal_core::fisher::FisherContext;
use firal_core::logistic::ClassProbTable;
use firal_core::numkit::{Matrix, SymMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Point on the open simplex, as the `K = c − 1` free-class entries.
pub fn random_h(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
    let t: f64 = w.iter().sum();
    w[..c - 1].iter().map(|v| v / t).collect()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random context with `n_lab` labeled points followed by `n_pool` pool
/// points.
pub fn random_ctx(seed: u64, n_lab: usize, n_pool: usize, d: usize, c: usize) -> FisherContext {
    let mut r = rng(seed);
    let n = n_lab + n_pool;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d)).collect();
    let probs: Vec<Vec<f64>> = (0..n).map(|_| random_h(&mut r, c)).collect();
    FisherContext::new(
        Matrix::from_rows(&rows).unwrap(),
        ClassProbTable::from_rows(c, &probs).unwrap(),
        (0..n_lab).collect(),
        (n_lab..n).collect(),
    )
    .unwrap()
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let g: Vec<f64> = random_vec(rng, n * n);
    let mut a = SymMatrix::identity(n);
    for i in 0..n {
        a.add_outer(1.0, &g[i * n..(i + 1) * n]);
    }
    a
}

pub fn to_na(a: &SymMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.dim(), a.dim(), a.as_slice())
}

pub fn na_vec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// `[diag(h) − h hᵀ] ⊗ (x xᵀ)` through nalgebra's Kronecker product.
pub fn kron_hessian(x: &[f64], h: &[f64]) -> DMatrix<f64> {
    let k = h.len();
    let hv = na_vec(h);
    let c = DMatrix::from_diagonal(&hv) - &hv * hv.transpose();
    let xv = na_vec(x);
    let xx = &xv * xv.transpose();
    debug_assert_eq!(c.nrows(), k);
    c.kronecker(&xx)
}

/// `Σ_{X_o} H_i + Σ_j w_j H_j` via Kronecker products.
pub fn kron_sum(ctx: &FisherContext, pool_weights: Option<&[f64]>, labeled: bool) -> DMatrix<f64> {
    let n = ctx.dim();
    let mut m = DMatrix::zeros(n, n);
    if labeled {
        for j in 0..ctx.n_labeled() {
            let (x, h) = ctx.labeled_point(j);
            m += kron_hessian(x, h);
        }
    }
    for j in 0..ctx.n_pool() {
        let w = pool_weights.map_or(1.0, |w| w[j]);
        let (x, h) = ctx.pool_point(j);
        m += kron_hessian(x, h) * w;
    }
    m
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Every ±1 vector of length `n`, in binary counting order.
pub fn all_sign_vectors(n: usize) -> Vec<Vec<f64>> {
    (0..1usize << n)
        .map(|m| {
            (0..n)
                .map(|i| if m >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect()
        })
        .collect()
}
