//! Seeded random instances and error metrics shared by the test suites,
//! the verification runner and the benches.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor4;

/// Uniform values in `[-1, 1)`.
pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, shape: [usize; 4]) -> Tensor4 {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor4::new(shape, data).expect("valid random tensor")
}

/// Standard normal samples.
pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `||a - b||_inf / ||b||_inf`, falling back to the absolute error when `b` is zero.
pub fn rel_err_inf(a: &[f64], b: &[f64]) -> f64 {
    let diff = max_abs_diff(a, b);
    let scale = max_abs(b);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}
