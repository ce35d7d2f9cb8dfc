//! Batch active learning for multiclass logistic regression by minimizing the
//! Fisher information ratio.
//!
//! The crate ships two interchangeable solver stacks:
//!
//! * an exact dense solver that materializes every `d̃ × d̃` Fisher matrix
//!   (`d̃ = d·K`, `K = c − 1`), used as the correctness oracle, and
//! * a scalable solver built from matrix-free Hessian matvecs, Hutchinson
//!   gradient estimates, block-diagonal preconditioned conjugate gradients and
//!   a block-diagonal rounding step with Sherman-Morrison scoring.
//!
//! Module map:
//!
//! * [`numkit`]: dense per-class blocks, Cholesky, symmetric eigenvalues,
//!   preconditioned CG, Rademacher probes and the FTRL normalizer `ν`.
//! * [`logistic`]: class probabilities, trainer, accuracy, entropy scores.
//! * [`fisher`]: per-point and pooled Fisher operators, block extraction.
//! * [`relax`]: entropic mirror descent over the simplex (exact and fast).
//! * [`round`]: regret-minimization rounding (exact and block-diagonal).

pub mod error;
pub mod fisher;
pub mod logistic;
pub mod numkit;
pub mod relax;
pub mod round;

pub use error::{Error, Result};
