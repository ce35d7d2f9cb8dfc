//! Normalizer of the FTRL action `A = ν I + η H̃`: the unique `ν` with
//! `Σ_j (ν + η λ_j)⁻² = 1` on the half-line `ν > −η λ_min`.

/// `Σ_j (ν + η λ_j)⁻² − 1`.
pub fn nu_residual(eigvals: &[f64], eta: f64, nu: f64) -> f64 {
    eigvals
        .iter()
        .map(|&l| (nu + eta * l).powi(-2))
        .sum::<f64>()
        - 1.0
}

/// Finds `ν` by bracketed bisection followed by Newton polishing.
///
/// With `m = η λ_min` and `N = eigvals.len()`, the bracket is
/// `[1 − m, √N − m]`: at the left end the smallest term alone is 1, at the
/// right end every term is at most `1/N`. The residual is strictly decreasing
/// in `ν`, so the root is unique.
pub fn find_nu(eigvals: &[f64], eta: f64) -> f64 {
    assert!(!eigvals.is_empty(), "find_nu needs at least one eigenvalue");
    assert!(eta > 0.0, "find_nu needs eta > 0");
    let count = eigvals.len() as f64;
    let (lo_l, hi_l) = eigvals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| {
            (lo.min(l), hi.max(l))
        });
    let shift_min = eta * lo_l;
    // identical shifted spectra (e.g. all zero) have the closed form √N − ηλ
    if eta * hi_l == shift_min {
        return count.sqrt() - shift_min;
    }

    let f = |nu: f64| nu_residual(eigvals, eta, nu);
    let mut lo = 1.0 - shift_min;
    let mut hi = count.sqrt() - shift_min;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 * hi.abs().max(1.0) {
            break;
        }
    }

    let mut nu = 0.5 * (lo + hi);
    for _ in 0..20 {
        let (mut g, mut dg) = (-1.0, 0.0);
        for &l in eigvals {
            let u = 1.0 / (nu + eta * l);
            g += u * u;
            dg -= 2.0 * u * u * u;
        }
        if dg == 0.0 {
            break;
        }
        let next = nu - g / dg;
        if next <= -shift_min || !next.is_finite() {
            break;
        }
        let done = (next - nu).abs() <= 4.0 * f64::EPSILON * nu.abs().max(1.0);
        nu = next;
        if done {
            break;
        }
    }
    nu
}
