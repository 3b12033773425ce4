//! Shared fixtures for the criterion benchmarks.

use cdm_core::rng::Seed;
use ndarray::Array2;

/// Deterministic covariate block for benchmark inputs.
pub fn bench_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    use rand::Rng;
    let mut rng = Seed::from_u64(seed).rng();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(0.0..1.0))
}
