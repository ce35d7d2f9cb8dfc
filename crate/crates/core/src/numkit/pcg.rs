//! Preconditioned conjugate gradients over matrix-free operators.
//!
//! Each right-hand side is solved independently with the Hestenes-Stiefel
//! recurrence; columns run in parallel. Convergence is declared on the true
//! residual `‖b − A x‖ / ‖b‖`: when the recurrence residual drops below the
//! tolerance the true residual is recomputed and, if it disagrees, the
//! iteration restarts from it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chol::{cholesky_factor_ridged, CholFactor};
use super::dense::{dot, norm2, BlockDiag, SymMatrix};
use crate::error::{check_len, Error, Result};

/// A square linear map on `dim`-vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// Writes `A x` into `y` (overwriting it).
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }
}

/// Applies an approximation of `A⁻¹`.
pub trait Preconditioner: Sync {
    fn apply_inverse(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

pub struct DenseOperator<'a>(pub &'a SymMatrix);

impl LinearOperator for DenseOperator<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.mul_vec_into(x, y);
    }
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply_inverse(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// `B(A)⁻¹` applied block by block through per-block Cholesky factors.
#[derive(Debug, Clone)]
pub struct BlockCholeskyPreconditioner {
    block_dim: usize,
    factors: Vec<CholFactor>,
    ridges: Vec<f64>,
}

impl BlockCholeskyPreconditioner {
    /// Factors every block, adding the standard ridge to blocks that are not
    /// numerically positive definite.
    pub fn new(blocks: &BlockDiag) -> Result<Self> {
        let mut factors = Vec::with_capacity(blocks.num_blocks());
        let mut ridges = Vec::with_capacity(blocks.num_blocks());
        for b in blocks.blocks() {
            let (f, ridge) = cholesky_factor_ridged(b)?;
            factors.push(f);
            ridges.push(ridge);
        }
        Ok(Self {
            block_dim: blocks.block_dim(),
            factors,
            ridges,
        })
    }

    pub fn factors(&self) -> &[CholFactor] {
        &self.factors
    }

    /// Ridge added to each block (zero when the block factored as given).
    pub fn ridges(&self) -> &[f64] {
        &self.ridges
    }
}

impl Preconditioner for BlockCholeskyPreconditioner {
    fn apply_inverse(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        let d = self.block_dim;
        for (k, f) in self.factors.iter().enumerate() {
            f.solve_in_place(&mut z[k * d..(k + 1) * d]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcgOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PcgOptions {
    fn default() -> Self {
        Self {
            tol: 0.1,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcgResult {
    /// One solution vector per right-hand-side column.
    pub solution: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub final_relative_residual: Vec<f64>,
    pub hit_max_iter: Vec<bool>,
}

impl PcgResult {
    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }

    pub fn total_iterations(&self) -> usize {
        self.iterations.iter().sum()
    }

    pub fn max_iter_hits(&self) -> usize {
        self.hit_max_iter.iter().filter(|&&h| h).count()
    }
}

struct ColumnSolve {
    x: Vec<f64>,
    iterations: usize,
    residual: f64,
    hit_max: bool,
}

pub fn pcg_solve<A, M>(op: &A, precond: &M, rhs: &[Vec<f64>], opts: PcgOptions) -> Result<PcgResult>
where
    A: LinearOperator + ?Sized,
    M: Preconditioner + ?Sized,
{
    if opts.tol.is_nan() || opts.tol <= 0.0 || opts.tol >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "pcg tolerance {} outside (0, 1)",
            opts.tol
        )));
    }
    for b in rhs {
        check_len(op.dim(), b.len())?;
    }
    let cols: Vec<ColumnSolve> = rhs
        .par_iter()
        .map(|b| solve_column(op, precond, b, opts))
        .collect::<Result<_>>()?;

    let mut out = PcgResult {
        solution: Vec::with_capacity(cols.len()),
        iterations: Vec::with_capacity(cols.len()),
        final_relative_residual: Vec::with_capacity(cols.len()),
        hit_max_iter: Vec::with_capacity(cols.len()),
    };
    for c in cols {
        out.solution.push(c.x);
        out.iterations.push(c.iterations);
        out.final_relative_residual.push(c.residual);
        out.hit_max_iter.push(c.hit_max);
    }
    Ok(out)
}

fn solve_column<A, M>(op: &A, precond: &M, b: &[f64], opts: PcgOptions) -> Result<ColumnSolve>
where
    A: LinearOperator + ?Sized,
    M: Preconditioner + ?Sized,
{
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(ColumnSolve {
            x,
            iterations: 0,
            residual: 0.0,
            hit_max: false,
        });
    }
    let target = opts.tol * bnorm;

    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond.apply_inverse(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;

    loop {
        if iterations >= opts.max_iter {
            let residual = true_residual(op, b, &x, &mut ap) / bnorm;
            return Ok(ColumnSolve {
                x,
                iterations,
                residual,
                hit_max: residual > opts.tol,
            });
        }
        op.apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 || !curvature.is_finite() {
            return Err(Error::Breakdown { curvature });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;

        if norm2(&r) <= target {
            let rtrue = true_residual(op, b, &x, &mut ap);
            if rtrue <= target {
                return Ok(ColumnSolve {
                    x,
                    iterations,
                    residual: rtrue / bnorm,
                    hit_max: false,
                });
            }
            // recurrence drifted: restart from the true residual
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            precond.apply_inverse(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }

        precond.apply_inverse(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
}

/// Returns `‖b − A x‖`, leaving `A x` in `scratch`.
fn true_residual<A: LinearOperator + ?Sized>(
    op: &A,
    b: &[f64],
    x: &[f64],
    scratch: &mut [f64],
) -> f64 {
    op.apply(x, scratch);
    b.iter()
        .zip(scratch.iter())
        .map(|(bi, ai)| (bi - ai) * (bi - ai))
        .sum::<f64>()
        .sqrt()
}
