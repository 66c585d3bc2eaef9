//! Weight initialization. All draws go through an explicit RNG so model
//! construction is a pure function of the seed.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Kaiming-normal for layers followed by ReLU: std = sqrt(2 / fan_in).
pub fn kaiming_normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let std = (2.0 / cols as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Xavier-uniform for linear heads: limit = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

pub fn zeros1(n: usize) -> Array1<f64> {
    Array1::zeros(n)
}
