#![allow(dead_code)]

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use spectra::rng::{self, Stream};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, Stream::Aux);
    let normal = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut r))
}

pub fn symmetric(n: usize, seed: u64) -> Array2<f64> {
    let a = gaussian(n, n, seed);
    (&a + &a.t()) * 0.5
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Strategy-free shape list used by property tests that sweep sizes.
pub const SHAPES: [(usize, usize); 6] = [(1, 1), (2, 3), (3, 3), (3, 7), (5, 12), (8, 8)];
