//! Dense small-matrix linear algebra and the iterative machinery shared by
//! every solver: Cholesky factors for the per-class `d × d` blocks, a Jacobi
//! symmetric eigensolver, preconditioned conjugate gradients over arbitrary
//! linear operators, Rademacher probes and the FTRL normalizer search.

mod chol;
mod dense;
mod eigen;
mod nu;
mod pcg;
mod rademacher;

pub use chol::{cholesky_factor, cholesky_factor_ridged, cholesky_solve, CholFactor, RIDGE_SCALE};
pub use dense::{dot, norm2, BlockDiag, Matrix, SymMatrix};
pub use eigen::{sym_eigen, sym_eigvals, sym_eigvals_with, EigenOptions, SymEigen};
pub use nu::{find_nu, nu_residual};
pub use pcg::{
    pcg_solve, BlockCholeskyPreconditioner, DenseOperator, IdentityOperator,
    IdentityPreconditioner, LinearOperator, PcgOptions, PcgResult, Preconditioner,
};
pub use rademacher::{rademacher_fill, rademacher_sample};
