mod common;

use common::*;
use firal_core::numkit::{
    cholesky_factor, find_nu, nu_residual, pcg_solve, sym_eigvals, BlockCholeskyPreconditioner,
    BlockDiag, DenseOperator, IdentityPreconditioner, PcgOptions, SymMatrix,
};
use nalgebra::DMatrix;

#[test]
fn cholesky_factor_reproduces_two_by_two() {
    let a = SymMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
    let f = cholesky_factor(&a).unwrap();
    // L Lᵀ by hand from the returned entries
    let l = [[f.l(0, 0), 0.0], [f.l(1, 0), f.l(1, 1)]];
    for i in 0..2 {
        for j in 0..2 {
            let v = l[i][0] * l[j][0] + l[i][1] * l[j][1];
            assert!((v - a.get(i, j)).abs() < 1e-15);
        }
    }
    assert!((f.l(1, 1) - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn cholesky_solve_matches_dense_inverse() {
    let mut r = rng(1);
    for _ in 0..10 {
        let a = random_spd(&mut r, 6);
        let b = random_vec(&mut r, 6);
        let x = cholesky_factor(&a).unwrap().solve(&b).unwrap();
        let oracle = to_na(&a).try_inverse().unwrap() * na_vec(&b);
        assert!(rel_err(&x, oracle.as_slice()) < 1e-10);
    }
}

#[test]
fn eigenvalues_match_nalgebra() {
    let mut r = rng(2);
    for n in [2, 5, 9] {
        let a = random_spd(&mut r, n);
        let mine = sym_eigvals(&a).unwrap();
        let mut theirs: Vec<f64> = to_na(&a)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        theirs.sort_by(f64::total_cmp);
        assert!(rel_err(&mine, &theirs) < 1e-12);
    }
    // characteristic polynomial of [[2,1],[1,2]] is (λ−1)(λ−3)
    let a = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
    for l in sym_eigvals(&a).unwrap() {
        assert!(((l - 1.0) * (l - 3.0)).abs() < 1e-14);
    }
}

#[test]
fn pcg_matches_direct_solve() {
    let mut r = rng(3);
    let a = random_spd(&mut r, 12);
    let b = random_vec(&mut r, 12);
    let opts = PcgOptions {
        tol: 1e-8,
        max_iter: 500,
    };
    let res = pcg_solve(
        &DenseOperator(&a),
        &IdentityPreconditioner,
        &[b.clone()],
        opts,
    )
    .unwrap();
    let direct = to_na(&a).lu().solve(&na_vec(&b)).unwrap();
    let err = res.solution[0]
        .iter()
        .zip(direct.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(err < 1e-6, "max abs error {err}");
    assert!(res.final_relative_residual[0] <= 1e-8);
}

#[test]
fn block_preconditioner_never_needs_more_iterations_on_sigma_systems() {
    let (mut pre_total, mut plain_total) = (0usize, 0usize);
    for seed in 0..20 {
        let ctx = random_ctx(100 + seed, 3, 40, 4, 4);
        let z = vec![1.0 / 40.0; 40];
        let sigma = firal_core::fisher::dense_sigma(&ctx, &z).unwrap();
        let blocks = firal_core::fisher::block_diag_sigma(&ctx, &z).unwrap();
        let pre = BlockCholeskyPreconditioner::new(&blocks).unwrap();
        let rhs = vec![random_vec(&mut rng(seed), ctx.dim())];
        let opts = PcgOptions {
            tol: 1e-6,
            max_iter: 2000,
        };
        pre_total += pcg_solve(&DenseOperator(&sigma), &pre, &rhs, opts)
            .unwrap()
            .iterations[0];
        plain_total += pcg_solve(&DenseOperator(&sigma), &IdentityPreconditioner, &rhs, opts)
            .unwrap()
            .iterations[0];
    }
    assert!(pre_total <= plain_total, "{pre_total} > {plain_total}");
}

#[test]
fn block_diag_dense_round_trip() {
    let mut r = rng(4);
    let blocks: Vec<SymMatrix> = (0..3).map(|_| random_spd(&mut r, 2)).collect();
    let bd = BlockDiag::from_blocks(blocks.clone()).unwrap();
    let dense = bd.to_dense();
    let na: DMatrix<f64> = to_na(&dense);
    assert_eq!(na[(0, 2)], 0.0);
    assert_eq!(
        BlockDiag::from_dense(&dense, 2).unwrap().blocks(),
        &blocks[..]
    );
}

#[test]
fn nu_by_independent_bisection() {
    let mut r = rng(5);
    for _ in 0..20 {
        let eig: Vec<f64> = random_vec(&mut r, 8)
            .into_iter()
            .map(|v| v.abs() * 3.0)
            .collect();
        let eta = 0.5;
        let nu = find_nu(&eig, eta);
        let m = eig.iter().copied().fold(f64::INFINITY, f64::min) * eta;
        let (mut lo, mut hi) = (-m + 1e-12, 100.0);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if nu_residual(&eig, eta, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((nu - lo).abs() < 1e-10 * lo.abs().max(1.0));
        assert!(nu_residual(&eig, eta, nu).abs() < 1e-12);
    }
}
