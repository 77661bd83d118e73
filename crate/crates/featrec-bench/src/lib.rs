//! Shared data builders for the pipeline benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Single-index regression data: `y = exp(b'x) + noise`, `x ~ U[-1, 1]^p`.
pub fn single_index(n: usize, p: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.gen_range(-1.0..1.0));
    let y = (0..n)
        .map(|i| {
            let u: f64 = (0..p.min(4)).map(|j| x[[i, j]]).sum();
            u.exp() + 0.1 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    (x, y)
}
