//! One-dimensional synthetic regression data.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::augment::BoxBounds;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// `0.3x + 0.3 sin(2πx) + 0.3 sin(4πx)`.
pub fn toy_function(x: f64) -> f64 {
    use std::f64::consts::PI;
    0.3 * x + 0.3 * (2.0 * PI * x).sin() + 0.3 * (4.0 * PI * x).sin()
}

/// Noise standard deviation when 0.02 is read as the noise variance.
pub const DEFAULT_NOISE_STD: f64 = 0.141_421_356_237_309_5;

/// Samples `n_per_region` inputs uniformly inside each region and labels
/// them with [`toy_function`] plus Gaussian noise. The returned dataset
/// carries `domain` as its declared input domain.
pub fn synth_1d(n_per_region: usize, regions: &[(f64, f64)], noise_std: f64, seed: u64, domain: (f64, f64)) -> Result<Dataset> {
    if regions.is_empty() || n_per_region == 0 {
        return Err(Error::contract("synth_1d needs at least one region and one point per region"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::contract(format!("noise_std must be nonnegative, got {noise_std}")));
    }
    if regions.iter().any(|(a, b)| !(a <= b) || *a < domain.0 || *b > domain.1) {
        return Err(Error::contract("regions must be ordered intervals inside the domain"));
    }
    let mut rng = stream(seed, Purpose::DataGeneration, 0);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::contract(e.to_string()))?;
    let mut features = Vec::with_capacity(n_per_region * regions.len());
    let mut targets = Vec::with_capacity(features.capacity());
    for &(a, b) in regions {
        for _ in 0..n_per_region {
            let x = if a == b { a } else { rng.random_range(a..b) };
            let eps = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            features.push(vec![x]);
            targets.push(toy_function(x) + eps);
        }
    }
    Dataset::with_domain("synth-1d", features, targets, BoxBounds::new(vec![domain.0], vec![domain.1])?)
}

/// Noise-free grid of `n` points over `domain`.
pub fn toy_grid(n: usize, domain: (f64, f64)) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::contract("grid needs at least 2 points"));
    }
    let xs: Vec<f64> = (0..n).map(|i| domain.0 + (domain.1 - domain.0) * i as f64 / (n - 1) as f64).collect();
    let targets = xs.iter().map(|&x| toy_function(x)).collect();
    Dataset::with_domain(
        "synth-1d-grid",
        xs.into_iter().map(|x| vec![x]).collect(),
        targets,
        BoxBounds::new(vec![domain.0], vec![domain.1])?,
    )
}
