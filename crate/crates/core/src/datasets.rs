//! Small synthetic classification sets.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::matrix::Matrix;
use crate::nn::Dataset;

/// Two Gaussian blobs (std `spread`) centred at `(-2, -2)` and `(2, 2)`, `n` points each.
pub fn blobs(n: usize, spread: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).map_err(|e| crate::Error::Config(e.to_string()))?;
    let mut rows = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for i in 0..2 * n {
        let class = i % 2;
        let c = if class == 0 { -2.0 } else { 2.0 };
        rows.push(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]);
        labels.push(class);
    }
    Dataset::new(Matrix::from_rows(&rows)?, labels)
}

/// Two interleaved spirals, `n` points per arm, with Gaussian jitter `noise`.
/// Radii run up to 1, so inputs stay inside `[-1.x, 1.x]`.
pub fn two_spirals(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise).map_err(|e| crate::Error::Config(e.to_string()))?;
    let mut rows = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = 0.1 + 0.9 * i as f64 / n.max(1) as f64;
        let angle = 3.0 * PI * t;
        for class in 0..2 {
            let sign = if class == 0 { 1.0 } else { -1.0 };
            rows.push(vec![
                sign * t * angle.cos() + jitter.sample(&mut rng),
                sign * t * angle.sin() + jitter.sample(&mut rng),
            ]);
            labels.push(class);
        }
    }
    Dataset::new(Matrix::from_rows(&rows)?, labels)
}
