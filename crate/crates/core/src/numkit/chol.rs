use serde::{Deserialize, Serialize};

use super::dense::SymMatrix;
use crate::error::{check_len, Error, Result};

/// Relative ridge applied when a block fails to factor: `ε = RIDGE_SCALE ·
/// trace(A) / d`.
pub const RIDGE_SCALE: f64 = 1e-8;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholFactor {
    dim: usize,
    // row-major, upper triangle left at zero
    lower: Vec<f64>,
}

pub fn cholesky_factor(a: &SymMatrix) -> Result<CholFactor> {
    let n = a.dim();
    let mut l = vec![0.0; n * n];
    // pivots at roundoff level of the largest diagonal count as zero, so
    // rank-deficient PSD input is reported rather than factored
    let max_diag = (0..n).map(|j| a.get(j, j).abs()).fold(0.0, f64::max);
    let floor = n as f64 * f64::EPSILON * max_diag;
    for j in 0..n {
        let mut pivot = a.get(j, j);
        for p in 0..j {
            pivot -= l[j * n + p] * l[j * n + p];
        }
        if pivot <= floor || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { row: j, pivot });
        }
        let diag = pivot.sqrt();
        l[j * n + j] = diag;
        for i in (j + 1)..n {
            let mut v = a.get(i, j);
            for p in 0..j {
                v -= l[i * n + p] * l[j * n + p];
            }
            l[i * n + j] = v / diag;
        }
    }
    Ok(CholFactor { dim: n, lower: l })
}

/// Factors `a`, retrying once with `a + εI` (`ε = 1e-8·trace(a)/d`) when the
/// plain factorization fails. Returns the factor and the ridge used.
pub fn cholesky_factor_ridged(a: &SymMatrix) -> Result<(CholFactor, f64)> {
    match cholesky_factor(a) {
        Ok(f) => Ok((f, 0.0)),
        Err(Error::NotPositiveDefinite { .. }) if a.dim() > 0 => {
            let ridge = RIDGE_SCALE * a.trace().abs() / a.dim() as f64;
            if ridge <= 0.0 || !ridge.is_finite() {
                return Err(Error::SingularSigma);
            }
            let mut shifted = a.clone();
            shifted.add_diagonal(ridge);
            cholesky_factor(&shifted)
                .map(|f| (f, ridge))
                .map_err(|_| Error::SingularSigma)
        }
        Err(e) => Err(e),
    }
}

pub fn cholesky_solve(f: &CholFactor, rhs: &[f64]) -> Result<Vec<f64>> {
    f.solve(rhs)
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn l(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, rhs.len())?;
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    /// Overwrites `x` with `A⁻¹ x`. Length must equal `dim`.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        self.forward_in_place(x);
        self.backward_in_place(x);
    }

    /// `x ← L⁻¹ x`.
    pub fn forward_in_place(&self, x: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.lower[i * n + i];
        }
    }

    /// `x ← L⁻ᵀ x`.
    pub fn backward_in_place(&self, x: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let mut s = x[i];
            for p in (i + 1)..n {
                s -= self.lower[p * n + i] * x[p];
            }
            x[i] = s / self.lower[i * n + i];
        }
    }

    /// Dense inverse `A⁻¹`, symmetric by construction.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        // W = L⁻¹, then A⁻¹ = Wᵀ W
        let mut w = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            self.forward_in_place(&mut col);
            for i in 0..n {
                w[i * n + j] = col[i];
            }
        }
        let mut inv = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                // (Wᵀ W)_ij = Σ_p W_pi W_pj, W lower so p ≥ max(i, j) = j
                let mut s = 0.0;
                for p in j..n {
                    s += w[p * n + i] * w[p * n + j];
                }
                inv.set(i, j, s);
            }
        }
        inv
    }

    /// Rebuilds `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.dim;
        let mut a = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for p in 0..=j {
                    s += self.l(i, p) * self.l(j, p);
                }
                a.set(i, j, s);
            }
        }
        a
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim).map(|i| 2.0 * self.l(i, i).ln()).sum()
    }

    pub fn det(&self) -> f64 {
        (0..self.dim).map(|i| self.l(i, i) * self.l(i, i)).product()
    }
}
