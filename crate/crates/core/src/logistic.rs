//! Multiclass logistic regression with a pinned reference class.
//!
//! With `c` classes there are `K = c − 1` free weight vectors `θ_k ∈ ℝᵈ`;
//! class `c` (index `K` in zero-based labels) has its logit fixed at zero:
//!
//! ```text
//! p(y = k | x) = exp(θ_kᵀx) / (1 + Σ_l exp(θ_lᵀx))   for k < K
//! p(y = K | x) = 1          / (1 + Σ_l exp(θ_lᵀx))
//! ```
//!
//! Weights are stored stacked by class, `θ = [θ_0; θ_1; …]`, matching the
//! `d̃ = d·K` layout the Fisher operators use.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numkit::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    dim: usize,
    num_classes: usize,
    theta: Vec<f64>,
}

impl ModelWeights {
    pub fn zeros(dim: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        Ok(Self {
            dim,
            num_classes,
            theta: vec![0.0; dim * (num_classes - 1)],
        })
    }

    /// `theta` stacked by class: entries `k·d .. (k+1)·d` hold `θ_k`.
    pub fn from_stacked(dim: usize, num_classes: usize, theta: Vec<f64>) -> Result<Self> {
        let mut w = Self::zeros(dim, num_classes)?;
        check_len(w.theta.len(), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite weight".into()));
        }
        w.theta = theta;
        Ok(w)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of free classes `K = c − 1`.
    pub fn free_classes(&self) -> usize {
        self.num_classes - 1
    }

    pub fn class_weights(&self, k: usize) -> &[f64] {
        &self.theta[k * self.dim..(k + 1) * self.dim]
    }

    pub fn stacked(&self) -> &[f64] {
        &self.theta
    }
}

/// Free-class probabilities `h` and the reference-class probability `p_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbs {
    pub h: Vec<f64>,
    pub reference: f64,
}

pub fn class_probs(theta: &ModelWeights, x: &[f64]) -> Result<ClassProbs> {
    check_len(theta.dim, x.len())?;
    let k = theta.free_classes();
    let mut h = vec![0.0; k];
    let reference = probs_into(theta, x, &mut h);
    Ok(ClassProbs { h, reference })
}

/// Stable evaluation into `h`; returns the reference-class probability.
/// The implicit zero logit takes part in the max subtraction.
fn probs_into(theta: &ModelWeights, x: &[f64], h: &mut [f64]) -> f64 {
    let mut max_logit = 0.0f64;
    for (kk, hk) in h.iter_mut().enumerate() {
        *hk = dot(theta.class_weights(kk), x);
        max_logit = max_logit.max(*hk);
    }
    let reference = (-max_logit).exp();
    let mut total = reference;
    for hk in h.iter_mut() {
        *hk = (*hk - max_logit).exp();
        total += *hk;
    }
    for hk in h.iter_mut() {
        *hk /= total;
    }
    reference / total
}

/// Cached `h_i` rows for every point of a feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbTable {
    num_classes: usize,
    // n × K row-major
    probs: Vec<f64>,
    reference: Vec<f64>,
}

impl ClassProbTable {
    pub fn compute(theta: &ModelWeights, features: &Matrix) -> Result<Self> {
        check_len(theta.dim, features.ncols())?;
        let k = theta.free_classes();
        let n = features.nrows();
        let mut probs = vec![0.0; n * k];
        let mut reference = vec![0.0; n];
        if k > 0 {
            probs
                .par_chunks_mut(k)
                .zip(reference.par_iter_mut())
                .enumerate()
                .for_each(|(i, (h, r))| *r = probs_into(theta, features.row(i), h));
        }
        Ok(Self {
            num_classes: theta.num_classes,
            probs,
            reference,
        })
    }

    /// Builds a table from explicit free-class rows (`K = c − 1` entries per
    /// point); the reference probability is the remainder.
    pub fn from_rows(num_classes: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let k = num_classes - 1;
        let mut probs = Vec::with_capacity(rows.len() * k);
        let mut reference = Vec::with_capacity(rows.len());
        for row in rows {
            check_len(k, row.len())?;
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || sum > 1.0 + 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "row {row:?} is not a sub-probability vector"
                )));
            }
            probs.extend_from_slice(row);
            reference.push((1.0 - sum).max(0.0));
        }
        Ok(Self {
            num_classes,
            probs,
            reference,
        })
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn free_classes(&self) -> usize {
        self.num_classes - 1
    }

    #[inline]
    pub fn h(&self, i: usize) -> &[f64] {
        let k = self.num_classes - 1;
        &self.probs[i * k..(i + 1) * k]
    }

    #[inline]
    pub fn reference(&self, i: usize) -> f64 {
        self.reference[i]
    }

    /// Keeps the listed rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let k = self.num_classes - 1;
        let mut probs = Vec::with_capacity(rows.len() * k);
        for &r in rows {
            probs.extend_from_slice(self.h(r));
        }
        Self {
            num_classes: self.num_classes,
            probs,
            reference: rows.iter().map(|&r| self.reference[r]).collect(),
        }
    }

    /// Most likely class per point; ties go to the lowest class index.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.len())
            .map(|i| {
                let mut best = (0, f64::NEG_INFINITY);
                for (c, &p) in self
                    .h(i)
                    .iter()
                    .chain(std::iter::once(&self.reference[i]))
                    .enumerate()
                {
                    if p > best.1 {
                        best = (c, p);
                    }
                }
                best.0
            })
            .collect()
    }
}

/// Fraction of points whose most likely class equals the label. Ties in the
/// probabilities resolve to the lowest class index. Empty input gives 0.
pub fn predict_accuracy(theta: &ModelWeights, features: &Matrix, labels: &[usize]) -> Result<f64> {
    check_len(features.nrows(), labels.len())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let table = ClassProbTable::compute(theta, features)?;
    let hits = table
        .predictions()
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `Σ_{k∈[c]} p_k ln p_k` per point, reference class included, with
/// `0 ln 0 = 0`. More negative means more uncertain.
pub fn entropy_scores(table: &ClassProbTable) -> Vec<f64> {
    let plogp = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    (0..table.len())
        .map(|i| table.h(i).iter().map(|&p| plogp(p)).sum::<f64>() + plogp(table.reference(i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub l2: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitWarning {
    /// Fewer than two distinct labels were present.
    DegenerateLabels {
        present: Vec<usize>,
    },
    MaxIterReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub weights: ModelWeights,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Objective after each accepted step, starting at the initial value.
    pub losses: Vec<f64>,
    pub warnings: Vec<FitWarning>,
}

impl FitReport {
    pub fn is_degenerate(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, FitWarning::DegenerateLabels { .. }))
    }
}

/// L2-regularized negative log-likelihood `Σ_i −ln p(y_i|x_i) + (l2/2)‖θ‖²`
/// and its gradient with respect to the stacked weights.
pub fn loss_and_gradient(
    theta: &ModelWeights,
    features: &Matrix,
    labels: &[usize],
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = theta.dim;
    let k = theta.free_classes();
    let n = features.nrows();
    let chunk = 256;
    let partials: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut loss = 0.0;
            let mut grad = vec![0.0; d * k];
            let mut h = vec![0.0; k];
            for i in (c * chunk)..((c + 1) * chunk).min(n) {
                let x = features.row(i);
                let pref = probs_into(theta, x, &mut h);
                let y = labels[i];
                let py = if y < k { h[y] } else { pref };
                loss -= py.max(f64::MIN_POSITIVE).ln();
                for kk in 0..k {
                    let resid = h[kk] - if y == kk { 1.0 } else { 0.0 };
                    if resid != 0.0 {
                        for (g, &xj) in grad[kk * d..(kk + 1) * d].iter_mut().zip(x) {
                            *g += resid * xj;
                        }
                    }
                }
            }
            (loss, grad)
        })
        .collect();
    let mut loss = 0.5 * l2 * dot(&theta.theta, &theta.theta);
    let mut grad: Vec<f64> = theta.theta.iter().map(|t| l2 * t).collect();
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (loss, grad)
}

/// Full-batch gradient descent with Armijo backtracking. Stops once the
/// gradient norm is at most `1e-6·n` or after `max_iter` steps.
pub fn fit(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    opts: FitOptions,
) -> Result<FitReport> {
    let n = features.nrows();
    check_len(n, labels.len())?;
    if n == 0 {
        return Err(Error::InvalidInput(
            "cannot fit on an empty labeled set".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} outside 0..{num_classes}"
        )));
    }
    if opts.l2.is_nan() || opts.l2 < 0.0 {
        return Err(Error::InvalidInput(format!(
            "l2 strength {} must be non-negative",
            opts.l2
        )));
    }

    let mut warnings = Vec::new();
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        warnings.push(FitWarning::DegenerateLabels { present });
    }

    let mut w = ModelWeights::zeros(features.ncols(), num_classes)?;
    let (mut loss, mut grad) = loss_and_gradient(&w, features, labels, opts.l2);
    let mut losses = vec![loss];
    let tol = 1e-6 * n as f64;
    let mut step = 1.0 / (n as f64).max(1.0);
    let mut iterations = 0;
    let mut gnorm = dot(&grad, &grad).sqrt();

    while gnorm > tol && iterations < opts.max_iter {
        let g2 = gnorm * gnorm;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = w
                .theta
                .iter()
                .zip(&grad)
                .map(|(t, g)| t - step * g)
                .collect();
            let cand = ModelWeights {
                theta: trial,
                ..w.clone()
            };
            let (cl, cg) = loss_and_gradient(&cand, features, labels, opts.l2);
            if cl <= loss - 0.5 * step * g2 {
                accepted = Some((cand, cl, cg));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cl, cg)) = accepted else {
            break;
        };
        w = cand;
        loss = cl;
        grad = cg;
        gnorm = dot(&grad, &grad).sqrt();
        losses.push(loss);
        iterations += 1;
        step *= 2.0;
    }
    if gnorm > tol {
        warnings.push(FitWarning::MaxIterReached);
    }
    Ok(FitReport {
        weights: w,
        iterations,
        gradient_norm: gnorm,
        losses,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let w = ModelWeights::zeros(3, 4).unwrap();
        let p = class_probs(&w, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(p.h, vec![0.25; 3]);
        assert_eq!(p.reference, 0.25);

        let w = ModelWeights::zeros(1, 2).unwrap();
        let p = class_probs(&w, &[5.0]).unwrap();
        assert_eq!(p.h, vec![0.5]);
        assert_eq!(p.reference, 0.5);
    }

    #[test]
    fn log_three_logit() {
        // exp(ln 3) / (1 + 3) = 3/4
        let w = ModelWeights::from_stacked(1, 2, vec![3f64.ln()]).unwrap();
        let p = class_probs(&w, &[1.0]).unwrap();
        assert!((p.h[0] - 0.75).abs() < 1e-15);
        assert!((p.reference - 0.25).abs() < 1e-15);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let w = ModelWeights::from_stacked(1, 3, vec![800.0, -800.0]).unwrap();
        let p = class_probs(&w, &[2.0]).unwrap();
        assert!(p.h.iter().all(|v| v.is_finite()));
        assert!((p.h[0] - 1.0).abs() < 1e-15);
        assert!((p.h.iter().sum::<f64>() + p.reference - 1.0).abs() < 1e-14);
    }

    #[test]
    fn shifting_logits_changes_probabilities() {
        // the reference class is pinned, so adding δ to every free logit is
        // not a symmetry
        let w0 = ModelWeights::from_stacked(1, 3, vec![0.3, -0.2]).unwrap();
        let w1 = ModelWeights::from_stacked(1, 3, vec![1.3, 0.8]).unwrap();
        let p0 = class_probs(&w0, &[1.0]).unwrap();
        let p1 = class_probs(&w1, &[1.0]).unwrap();
        assert!((p0.h[0] - p1.h[0]).abs() > 1e-3);
        // the ratio between free classes is preserved
        assert!((p0.h[0] / p0.h[1] - p1.h[0] / p1.h[1]).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        let t = ClassProbTable::from_rows(2, &[vec![0.5]]).unwrap();
        assert!((entropy_scores(&t)[0] + 2f64.ln()).abs() < 1e-15);

        let t = ClassProbTable::from_rows(3, &[vec![0.5, 0.25]]).unwrap();
        let expect = 0.5 * 0.5f64.ln() + 2.0 * (0.25 * 0.25f64.ln());
        assert!((entropy_scores(&t)[0] - expect).abs() < 1e-15);

        let t = ClassProbTable::from_rows(3, &[vec![1.0 - 1e-12, 5e-13]]).unwrap();
        let s = entropy_scores(&t)[0];
        assert!(s <= 0.0 && s > -1e-10);
    }

    #[test]
    fn zero_weights_predict_first_class() {
        let w = ModelWeights::zeros(2, 3).unwrap();
        let x = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![-1.0, 0.0],
            vec![0.0, 3.0],
            vec![4.0, 4.0],
        ])
        .unwrap();
        let labels = [0, 1, 2, 0];
        assert_eq!(predict_accuracy(&w, &x, &labels).unwrap(), 0.5);
    }

    #[test]
    fn hand_built_three_point_accuracy() {
        // θ_0 = [1, 0], θ_1 = [0, 1], reference logit 0
        let w = ModelWeights::from_stacked(2, 3, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        // logits (x·θ_0, x·θ_1, 0): (2, 1, 0) → 0; (−1, 3, 0) → 1; (−1, −1, 0) → 2
        let x = Matrix::from_rows(&[vec![2.0, 1.0], vec![-1.0, 3.0], vec![-1.0, -1.0]]).unwrap();
        assert_eq!(predict_accuracy(&w, &x, &[0, 1, 2]).unwrap(), 1.0);
        assert!((predict_accuracy(&w, &x, &[0, 2, 2]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn separable_pair_is_fit_exactly() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let labels = [0, 1];
        let fit = fit(
            &x,
            &labels,
            2,
            FitOptions {
                l2: 1.0,
                max_iter: 1000,
            },
        )
        .unwrap();
        assert!(!fit.is_degenerate());
        assert_eq!(predict_accuracy(&fit.weights, &x, &labels).unwrap(), 1.0);
        assert!(fit.gradient_norm <= 2e-6);
    }

    #[test]
    fn binary_blob_matches_plain_gradient_descent() {
        // two 10-point blobs on a deterministic spiral, with one point of each
        // label pushed across so the problem is not separable
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let t = i as f64 * 0.7;
            let r = 0.3 + 0.05 * i as f64;
            let (cx, cy) = if i < 10 { (1.0, 0.5) } else { (-1.0, -0.5) };
            rows.push(vec![cx + r * t.cos(), cy + r * t.sin()]);
            labels.push(if i < 10 { 0 } else { 1 });
        }
        labels[3] = 1;
        labels[14] = 0;
        let x = Matrix::from_rows(&rows).unwrap();

        // oracle: class 0 has logit θ·x, class 1 is the reference
        let sigmoid = |u: f64| 1.0 / (1.0 + (-u).exp());
        let oracle_loss = |th: &[f64]| {
            let mut l = 0.5 * (th[0] * th[0] + th[1] * th[1]);
            for (r, &y) in rows.iter().zip(&labels) {
                let p0 = sigmoid(th[0] * r[0] + th[1] * r[1]);
                l -= if y == 0 { p0.ln() } else { (1.0 - p0).ln() };
            }
            l
        };
        let lipschitz = 1.0 + 0.25 * rows.iter().map(|r| r[0] * r[0] + r[1] * r[1]).sum::<f64>();
        let mut th = [0.0f64; 2];
        for _ in 0..20000 {
            let mut g = th;
            for (r, &y) in rows.iter().zip(&labels) {
                let resid = sigmoid(th[0] * r[0] + th[1] * r[1]) - if y == 0 { 1.0 } else { 0.0 };
                g[0] += resid * r[0];
                g[1] += resid * r[1];
            }
            th[0] -= g[0] / lipschitz;
            th[1] -= g[1] / lipschitz;
        }

        let fit = fit(&x, &labels, 2, FitOptions::default()).unwrap();
        let ours = oracle_loss(fit.weights.stacked());
        assert!(
            (ours - oracle_loss(&th)).abs() < 1e-4,
            "{ours} vs {}",
            oracle_loss(&th)
        );
        assert!((fit.losses.last().unwrap() - ours).abs() < 1e-10);
        for w in fit.losses.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn identical_labels_are_flagged() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let fit = fit(&x, &[1, 1], 3, FitOptions::default()).unwrap();
        assert!(fit.is_degenerate());
        assert!(fit.weights.stacked().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bad_labels_are_rejected() {
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(fit(&x, &[3], 3, FitOptions::default()).is_err());
        assert!(fit(&Matrix::zeros(0, 1), &[], 3, FitOptions::default()).is_err());
    }
}
