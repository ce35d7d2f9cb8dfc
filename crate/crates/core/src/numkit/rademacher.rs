use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `s` Rademacher probe vectors of length `dim` (entries ±1), returned as
/// columns. Deterministic for a fixed seed on every platform.
pub fn rademacher_sample(dim: usize, s: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rademacher_fill(&mut rng, dim, s)
}

/// Draws probe columns from an existing generator.
pub fn rademacher_fill<R: Rng + ?Sized>(rng: &mut R, dim: usize, s: usize) -> Vec<Vec<f64>> {
    (0..s)
        .map(|_| {
            (0..dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect()
}
