//! Rank-4 real and complex arrays in `[batch, channel, height, width]` layout.
//!
//! Both types store their elements contiguously in row-major order, so every
//! `(batch, channel)` pair owns one contiguous `height * width` plane. Most of
//! the crate works plane by plane through [`Tensor4::planes`] and friends.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ConverseError, Result};

fn check_shape(shape: [usize; 4], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(ConverseError::InvalidShape {
            shape: shape.to_vec(),
            reason: "all dimensions must be at least 1".into(),
        });
    }
    let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    if count != Some(len) {
        return Err(ConverseError::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("element count {len} does not match the shape"),
        });
    }
    Ok(())
}

/// Real feature map `[B, C, H, W]`. Values are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ConverseError::NonFinite);
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    /// Builds a tensor by evaluating `f(b, c, i, j)` at every position.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let [nb, nc, h, w] = shape;
        let mut data = Vec::with_capacity(nb * nc * h * w);
        for b in 0..nb {
            for c in 0..nc {
                for i in 0..h {
                    for j in 0..w {
                        data.push(f(b, c, i, j));
                    }
                }
            }
        }
        Self::new(shape, data)
    }

    /// Skips validation. Callers guarantee the shape and finiteness.
    pub(crate) fn from_parts(shape: [usize; 4], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn get(&self, b: usize, c: usize, i: usize, j: usize) -> f64 {
        let [_, nc, h, w] = self.shape;
        self.data[((b * nc + c) * h + i) * w + j]
    }

    /// The `(b, c)` plane as a row-major `H * W` slice.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let n = self.plane_len();
        let start = (b * self.shape[1] + c) * n;
        &self.data[start..start + n]
    }

    /// Iterates planes in `(b, c)` order.
    pub fn planes(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.plane_len())
    }

    /// Applies `f` elementwise. Fails if any result is non-finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise `alpha * self + beta * other`.
    pub fn axpby(&self, alpha: f64, other: &Tensor4, beta: f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(ConverseError::DimensionMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| alpha * a + beta * b).collect();
        Self::new(self.shape, data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Complex spectrum `[B, C, H, W]`, usually the per-plane 2-D DFT of a [`Tensor4`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    shape: [usize; 4],
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(shape: [usize; 4], data: Vec<Complex64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: [usize; 4], data: Vec<Complex64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    /// Lifts real values to a spectrum with zero imaginary parts.
    pub fn from_real(shape: [usize; 4], re: &[f64]) -> Result<Self> {
        Self::new(shape, re.iter().map(|&r| Complex64::new(r, 0.0)).collect())
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn get(&self, b: usize, c: usize, u: usize, v: usize) -> Complex64 {
        let [_, nc, h, w] = self.shape;
        self.data[((b * nc + c) * h + u) * w + v]
    }

    pub fn plane(&self, b: usize, c: usize) -> &[Complex64] {
        let n = self.plane_len();
        let start = (b * self.shape[1] + c) * n;
        &self.data[start..start + n]
    }

    pub fn planes(&self) -> std::slice::ChunksExact<'_, Complex64> {
        self.data.chunks_exact(self.plane_len())
    }

    /// Largest relative violation of `S[u,v] = conj(S[-u,-v])` over all planes.
    pub fn conjugate_asymmetry(&self) -> f64 {
        let (h, w) = (self.height(), self.width());
        let mut worst = 0.0f64;
        for plane in self.planes() {
            let scale = plane.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
            for u in 0..h {
                for v in 0..w {
                    let mirror = plane[((h - u) % h) * w + (w - v) % w];
                    worst = worst.max((plane[u * w + v] - mirror.conj()).norm() / scale);
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dims_and_bad_counts() {
        assert!(matches!(Tensor4::zeros([1, 0, 2, 2]), Err(ConverseError::InvalidShape { .. })));
        assert!(matches!(Tensor4::new([1, 1, 2, 2], vec![0.0; 3]), Err(ConverseError::InvalidShape { .. })));
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(Tensor4::new([1, 1, 1, 2], vec![1.0, f64::NAN]), Err(ConverseError::NonFinite));
        assert_eq!(Tensor4::new([1, 1, 1, 1], vec![f64::INFINITY]), Err(ConverseError::NonFinite));
    }

    #[test]
    fn plane_indexing_is_row_major() {
        let t = Tensor4::from_fn([2, 3, 2, 2], |b, c, i, j| (1000 * b + 100 * c + 10 * i + j) as f64).unwrap();
        assert_eq!(t.plane(1, 2), &[1200.0, 1201.0, 1210.0, 1211.0]);
        assert_eq!(t.get(0, 1, 1, 0), 110.0);
        assert_eq!(t.planes().count(), 6);
    }
}
