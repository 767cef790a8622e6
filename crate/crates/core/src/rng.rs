//! Seeded randomness. Every random draw in the crate comes from a ChaCha
//! stream selected by `(seed, stream)`, so sub-tasks can be run in any order
//! (or in parallel) and still see the same numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw from the probability simplex (normalized exponentials).
pub fn simplex_point<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// A simplex point with some coordinates forced to zero, which exercises
/// degenerate supports.
pub fn sparse_simplex_point<R: Rng>(rng: &mut R, n: usize, zero_prob: f64) -> Vec<f64> {
    let keep = rng.gen_range(0..n);
    let mut w: Vec<f64> =
        (0..n).map(|i| if i != keep && rng.gen::<f64>() < zero_prob { 0.0 } else { -(1.0 - rng.gen::<f64>()).ln() }).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

pub fn uniform_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}
