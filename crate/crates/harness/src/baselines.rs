//! Baseline selectors: uniform random, k-means centroids, max entropy.
//!
//! All three return positions into the pool they are given.

use firal_core::logistic::{entropy_scores, ClassProbTable};
use firal_core::numkit::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LLOYD_MAX_ITERS: usize = 100;

/// `b` distinct positions in `0..n`, uniformly without replacement.
pub fn random_select(n: usize, b: usize, seed: u64) -> Vec<usize> {
    assert!(b <= n, "cannot draw {b} of {n}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, n, b).into_vec()
}

/// The `b` positions with the highest predictive entropy; ties go to the
/// lower position.
pub fn entropy_select(probs: &ClassProbTable, pool: &[usize], b: usize) -> Vec<usize> {
    assert!(b <= pool.len(), "cannot draw {b} of {}", pool.len());
    // entropy_scores returns Σ p ln p, the negated entropy
    let neg = entropy_scores(&probs.select_rows(pool));
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &c| neg[a].total_cmp(&neg[c]).then(a.cmp(&c)));
    order.truncate(b);
    order
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding.
fn seed_centroids(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let mut centroids = vec![points.row(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // every point already coincides with a centroid
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Lloyd iterations from k-means++ seeds.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let d = points.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..LLOYD_MAX_ITERS {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let j = nearest_centroid(points.row(i), &centroids);
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            // an empty cluster keeps its previous centroid
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    centroids
}

/// Runs k-means with `k = b` on the pool features and returns the pool
/// point nearest each centroid. A point claimed twice goes to the first
/// centroid; later ones take their next-nearest unclaimed point.
pub fn kmeans_select(features: &Matrix, pool: &[usize], b: usize, seed: u64) -> Vec<usize> {
    let n = pool.len();
    assert!(b <= n, "cannot draw {b} of {n}");
    if b == 0 {
        return Vec::new();
    }
    let pts = features.select_rows(pool);
    let centroids = kmeans(&pts, b, seed);
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(b);
    for c in &centroids {
        let mut order: Vec<(f64, usize)> = (0..n).map(|i| (sq_dist(pts.row(i), c), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (_, i) = *order
            .iter()
            .find(|(_, i)| !taken[*i])
            .expect("b <= n leaves an unclaimed point");
        taken[i] = true;
        out.push(i);
    }
    out
}
