mod common;

use common::{random_ctx, random_spd, random_vec, rng};
use firal_core::fisher::{hessian_bilinear, HessianSumOperator, StackedVec};
use firal_core::logistic::{class_probs, fit, FitOptions, ModelWeights};
use firal_core::numkit::{
    cholesky_factor, cholesky_solve, dot, find_nu, nu_residual, pcg_solve, sym_eigvals,
    DenseOperator, IdentityPreconditioner, LinearOperator, Matrix, PcgOptions,
};
use firal_core::relax::{exact_gradient, mirror_step};
use proptest::prelude::*;
use rand::Rng;

fn simplex_point(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
    let t: f64 = w.iter().sum();
    w.into_iter().map(|v| v / t).collect()
}

proptest! {
    #[test]
    fn cholesky_reconstructs(seed in any::<u64>(), n in 1usize..12) {
        let a = random_spd(&mut rng(seed), n);
        let l = cholesky_factor(&a).unwrap().reconstruct();
        let scale = a.max_abs();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((l.get(i, j) - a.get(i, j)).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn pcg_matches_direct_solve(seed in any::<u64>(), n in 1usize..16) {
        let mut r = rng(seed);
        let a = random_spd(&mut r, n);
        let b = random_vec(&mut r, n);
        let opts = PcgOptions { tol: 1e-10, max_iter: 10 * n + 50 };
        let res = pcg_solve(&DenseOperator(&a), &IdentityPreconditioner, &[b.clone()], opts).unwrap();
        let direct = cholesky_solve(&cholesky_factor(&a).unwrap(), &b).unwrap();
        let err: f64 = res.solution[0].iter().zip(&direct).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let norm = dot(&direct, &direct).sqrt();
        // residual 1e-10 times the condition number bounds the error
        prop_assert!(err <= 1e-7 * norm.max(1.0), "err {err}");
    }

    #[test]
    fn nu_solves_and_is_monotone(
        eig in prop::collection::vec(0.0f64..50.0, 1..20),
        eta in 0.01f64..5.0,
        bump in 0.0f64..10.0,
        idx in any::<prop::sample::Index>(),
    ) {
        let nu = find_nu(&eig, eta);
        let total: f64 = eig.iter().map(|l| (nu + eta * l).powi(-2)).sum();
        prop_assert!((total - 1.0).abs() < 1e-8, "sum {total}");
        prop_assert!(eig.iter().all(|l| nu + eta * l > 0.0));

        let mut raised = eig.clone();
        raised[idx.index(eig.len())] += bump;
        let nu2 = find_nu(&raised, eta);
        prop_assert!(nu2 <= nu + 1e-9 * nu.abs().max(1.0), "{nu2} > {nu}");
        prop_assert!(nu_residual(&raised, eta, nu2).abs() < 1e-8);
    }

    #[test]
    fn eigenvalues_match_trace_and_determinant(seed in any::<u64>(), n in 1usize..9) {
        let a = random_spd(&mut rng(seed), n);
        let ev = sym_eigvals(&a).unwrap();
        let sum: f64 = ev.iter().sum();
        prop_assert!((sum - a.trace()).abs() <= 1e-10 * a.trace());
        let prod: f64 = ev.iter().product();
        let det = cholesky_factor(&a).unwrap().det();
        prop_assert!((prod - det).abs() <= 1e-9 * det);
        prop_assert!(ev.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn probabilities_are_normalized(
        theta in prop::collection::vec(-30.0f64..30.0, 12),
        x in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let w = ModelWeights::from_stacked(3, 5, theta).unwrap();
        let p = class_probs(&w, &x).unwrap();
        let total = p.h.iter().sum::<f64>() + p.reference;
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(p.h.iter().chain([&p.reference]).all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn stacked_round_trip(d in 1usize..8, k in 1usize..6, seed in any::<u64>()) {
        let data = random_vec(&mut rng(seed), d * k);
        let v = StackedVec::from_vec(d, k, data.clone()).unwrap();
        let cols = v.columns();
        prop_assert_eq!(cols.len(), k);
        for (kk, c) in cols.iter().enumerate() {
            prop_assert_eq!(c.as_slice(), &data[kk * d..(kk + 1) * d]);
        }
        let back = StackedVec::from_columns(&cols).unwrap();
        prop_assert_eq!(back.into_vec(), data);
    }

    #[test]
    fn mirror_step_stays_on_simplex(
        seed in any::<u64>(),
        n in 1usize..40,
        beta in 0.0f64..100.0,
        gscale in 1e-6f64..1e6,
    ) {
        let z = simplex_point(seed, n);
        let g: Vec<f64> = random_vec(&mut rng(seed ^ 1), n).iter().map(|v| v * gscale).collect();
        let next = mirror_step(&z, &g, beta);
        prop_assert!(next.iter().all(|&v| v >= 0.0 && v.is_finite()));
        prop_assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_loss_never_increases(seed in any::<u64>(), n in 2usize..30, c in 2usize..5) {
        let mut r = rng(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, 3)).collect();
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let rep = fit(&x, &labels, c, FitOptions { l2: 1.0, max_iter: 300 }).unwrap();
        for w in rep.losses.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn sigma_operator_is_symmetric_psd(seed in any::<u64>(), n_lab in 0usize..4, n_pool in 1usize..12) {
        let ctx = random_ctx(seed, n_lab, n_pool, 3, 4);
        let z = simplex_point(seed ^ 7, n_pool);
        let op = HessianSumOperator::sigma(&ctx, &z).unwrap();
        let mut r = rng(seed ^ 3);
        let u = random_vec(&mut r, ctx.dim());
        let v = random_vec(&mut r, ctx.dim());
        let (au, av) = (op.apply_vec(&u), op.apply_vec(&v));
        let scale = dot(&u, &u).sqrt() * dot(&av, &av).sqrt() + 1e-300;
        prop_assert!((dot(&v, &au) - dot(&u, &av)).abs() <= 1e-12 * scale.max(1.0));
        prop_assert!(dot(&u, &au) >= -1e-12);
    }

    #[test]
    fn point_hessian_is_psd(seed in any::<u64>(), c in 2usize..6) {
        let mut r = rng(seed);
        let x = random_vec(&mut r, 4);
        let h = common::random_h(&mut r, c);
        let v = random_vec(&mut r, 4 * (c - 1));
        prop_assert!(hessian_bilinear(&x, &h, &v, &v) >= -1e-14);
    }

    #[test]
    fn exact_gradient_is_nonpositive(seed in any::<u64>(), n_pool in 2usize..10) {
        let ctx = random_ctx(seed, 2, n_pool, 2, 3);
        let z = simplex_point(seed ^ 11, n_pool);
        let g = exact_gradient(&ctx, &z).unwrap();
        prop_assert!(g.iter().all(|&v| v <= 1e-10), "{g:?}");
    }
}
