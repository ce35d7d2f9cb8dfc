use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Row-major dense matrix. Used for feature tables (`n × d`, one point per
/// row) and for general rectangular intermediates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn from_vec(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        check_len(nrows * ncols, data.len())?;
        Ok(Self { nrows, ncols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for row in rows {
            check_len(ncols, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self {
            nrows: rows.len(),
            ncols,
            data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.ncols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copies the listed rows into a new matrix, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            nrows: rows.len(),
            ncols: self.ncols,
            data,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.ncols, x.len())?;
        Ok((0..self.nrows).map(|i| dot(self.row(i), x)).collect())
    }
}

/// Dense symmetric matrix with full storage.
///
/// Constructors that accept arbitrary data reject asymmetric input exactly;
/// arithmetic helpers write both triangles so the invariant `a[i][j] ==
/// a[j][i]` holds bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// Builds from row-major data, failing unless the input is exactly
    /// symmetric and finite.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        check_len(dim * dim, data.len())?;
        for i in 0..dim {
            for j in 0..dim {
                let v = data[i * dim + j];
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite entry at ({i}, {j})"
                    )));
                }
                if j > i && v != data[j * dim + i] {
                    return Err(Error::InvalidInput(format!(
                        "asymmetric entry at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            check_len(dim, row.len())?;
            data.extend_from_slice(row);
        }
        Self::from_row_major(dim, data)
    }

    /// Builds from row-major data that is symmetric up to roundoff by
    /// averaging the two triangles.
    pub fn symmetrized(dim: usize, mut data: Vec<f64>) -> Result<Self> {
        check_len(dim * dim, data.len())?;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let avg = 0.5 * (data[i * dim + j] + data[j * dim + i]);
                data[i * dim + j] = avg;
                data[j * dim + i] = avg;
            }
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets `a[i][j]` and `a[j][i]`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        norm2(&self.data)
    }

    /// `self += weight · x xᵀ`.
    pub fn add_outer(&mut self, weight: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.dim;
        for i in 0..n {
            let wi = weight * x[i];
            if wi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * n..(i + 1) * n];
            for (r, &xj) in row.iter_mut().zip(x) {
                *r += wi * xj;
            }
        }
    }

    /// `self += weight · other`.
    pub fn add_scaled(&mut self, weight: f64, other: &SymMatrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += weight * b;
        }
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add_diagonal(&mut self, shift: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += shift;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(self.row(i), x);
        }
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                acc += xi * dot(self.row(i), x);
            }
        }
        acc
    }

    /// General product `self · other` (not symmetric in general).
    pub fn matmul(&self, other: &SymMatrix) -> Matrix {
        let n = self.dim;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                let orow = out.row_mut(i);
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `A M A` for symmetric `A` and `M`, symmetrized to remove roundoff
    /// asymmetry.
    pub fn sandwich(&self, middle: &SymMatrix) -> SymMatrix {
        let am = self.matmul(middle);
        let n = self.dim;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            let ri = am.row(i);
            for j in i..n {
                let v = dot(ri, self.row(j));
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        SymMatrix { dim: n, data }
    }

    /// Extracts the `size × size` diagonal block starting at `offset`.
    pub fn diagonal_block(&self, offset: usize, size: usize) -> SymMatrix {
        let mut b = SymMatrix::zeros(size);
        for i in 0..size {
            for j in 0..size {
                b.data[i * size + j] = self.get(offset + i, offset + j);
            }
        }
        b
    }

    /// Copies `block` onto the diagonal starting at `offset`.
    pub fn set_diagonal_block(&mut self, offset: usize, block: &SymMatrix) {
        let size = block.dim;
        for i in 0..size {
            for j in 0..size {
                self.data[(offset + i) * self.dim + offset + j] = block.get(i, j);
            }
        }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `K` symmetric `d × d` blocks of a `d̃ × d̃` block-diagonal matrix, in class
/// order. Block `k` acts on entries `k·d .. (k+1)·d` of a stacked vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiag {
    block_dim: usize,
    blocks: Vec<SymMatrix>,
}

impl BlockDiag {
    pub fn zeros(num_blocks: usize, block_dim: usize) -> Self {
        Self {
            block_dim,
            blocks: vec![SymMatrix::zeros(block_dim); num_blocks],
        }
    }

    pub fn from_blocks(blocks: Vec<SymMatrix>) -> Result<Self> {
        let block_dim = blocks.first().map_or(0, SymMatrix::dim);
        for b in &blocks {
            check_len(block_dim, b.dim())?;
        }
        Ok(Self { block_dim, blocks })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn dim(&self) -> usize {
        self.block_dim * self.blocks.len()
    }

    pub fn block(&self, k: usize) -> &SymMatrix {
        &self.blocks[k]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut SymMatrix {
        &mut self.blocks[k]
    }

    pub fn blocks(&self) -> &[SymMatrix] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<SymMatrix> {
        self.blocks
    }

    pub fn add_scaled(&mut self, weight: f64, other: &BlockDiag) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.add_scaled(weight, b);
        }
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().map(SymMatrix::trace).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.block_dim;
        let mut y = vec![0.0; self.dim()];
        for (k, b) in self.blocks.iter().enumerate() {
            b.mul_vec_into(&x[k * d..(k + 1) * d], &mut y[k * d..(k + 1) * d]);
        }
        y
    }

    /// Expands to the full `d̃ × d̃` matrix with zero off-diagonal blocks.
    pub fn to_dense(&self) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.dim());
        for (k, b) in self.blocks.iter().enumerate() {
            m.set_diagonal_block(k * self.block_dim, b);
        }
        m
    }

    /// Keeps only the `d × d` diagonal blocks of a dense `d̃ × d̃` matrix.
    pub fn from_dense(dense: &SymMatrix, block_dim: usize) -> Result<Self> {
        if block_dim == 0 || dense.dim() % block_dim != 0 {
            return Err(Error::InvalidInput(format!(
                "dimension {} is not a multiple of block size {block_dim}",
                dense.dim()
            )));
        }
        let blocks = (0..dense.dim() / block_dim)
            .map(|k| dense.diagonal_block(k * block_dim, block_dim))
            .collect();
        Ok(Self { block_dim, blocks })
    }
}
