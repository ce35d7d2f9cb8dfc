//! Symmetric eigensolver: cyclic Jacobi rotations.
//!
//! Jacobi is slower than tridiagonal QR for large matrices but every
//! eigenvalue comes out with small relative error, the code is short, and the
//! matrices it sees here are per-class `d × d` blocks or oracle-sized dense
//! Fisher matrices.

use serde::{Deserialize, Serialize};

use super::dense::{Matrix, SymMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub max_dim: usize,
    pub max_sweeps: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            max_dim: 4096,
            max_sweeps: 64,
        }
    }
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    /// `V f(Λ) Vᵀ` for a scalar function applied to each eigenvalue.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.values.len();
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for (k, &w) in fl.iter().enumerate() {
                    s += self.vectors.get(i, k) * w * self.vectors.get(j, k);
                }
                data[i * n + j] = s;
                data[j * n + i] = s;
            }
        }
        SymMatrix::symmetrized(n, data).expect("square by construction")
    }
}

pub fn sym_eigvals(a: &SymMatrix) -> Result<Vec<f64>> {
    sym_eigvals_with(a, EigenOptions::default())
}

pub fn sym_eigvals_with(a: &SymMatrix, opts: EigenOptions) -> Result<Vec<f64>> {
    jacobi(a, opts, false).map(|(values, _)| values)
}

pub fn sym_eigen(a: &SymMatrix) -> Result<SymEigen> {
    let (values, vectors) = jacobi(a, EigenOptions::default(), true)?;
    Ok(SymEigen {
        values,
        vectors: vectors.expect("requested"),
    })
}

fn jacobi(
    a: &SymMatrix,
    opts: EigenOptions,
    want_vectors: bool,
) -> Result<(Vec<f64>, Option<Matrix>)> {
    let n = a.dim();
    if n > opts.max_dim {
        return Err(Error::SizeCap {
            size: n,
            cap: opts.max_dim,
        });
    }
    let mut m = a.as_slice().to_vec();
    let mut v = want_vectors.then(|| {
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i * n + i] = 1.0;
        }
        id
    });

    let scale: f64 = m.iter().map(|x| x * x).sum();
    let threshold = (f64::EPSILON * f64::EPSILON) * scale;
    let mut converged = n <= 1;
    for _ in 0..opts.max_sweeps {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off <= threshold || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m[r * n + p];
                    let arq = m[r * n + q];
                    let new_rp = c * arp - s * arq;
                    let new_rq = s * arp + c * arq;
                    m[r * n + p] = new_rp;
                    m[p * n + r] = new_rp;
                    m[r * n + q] = new_rq;
                    m[q * n + r] = new_rq;
                }
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                if let Some(v) = v.as_mut() {
                    for r in 0..n {
                        let vrp = v[r * n + p];
                        let vrq = v[r * n + q];
                        v[r * n + p] = c * vrp - s * vrq;
                        v[r * n + q] = s * vrp + c * vrq;
                    }
                }
            }
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure {
            sweeps: opts.max_sweeps,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = v.map(|v| {
        let mut sorted = Matrix::zeros(n, n);
        for (new_col, &old_col) in order.iter().enumerate() {
            for r in 0..n {
                sorted.set(r, new_col, v[r * n + old_col]);
            }
        }
        sorted
    });
    Ok((values, vectors))
}
