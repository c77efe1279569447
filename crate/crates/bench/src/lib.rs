//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// `n` weights drawn from `N(0, 0.05²)`, a typical trained-layer spread.
pub fn gaussian_weights(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 0.05).unwrap();
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// `n` query points uniform in the square `[-half, half]²`.
pub fn box_queries(n: usize, half: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = rand_distr::Uniform::new_inclusive(-half, half);
    (0..n).map(|_| [u.sample(&mut rng), u.sample(&mut rng)]).collect()
}
