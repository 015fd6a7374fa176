//! Per-plane 2-D DFT over the last two axes.
//!
//! Forward transforms are unnormalized; the inverse scales by `1 / (H * W)`.
//! Arbitrary lengths are supported (rustfft falls back to Bluestein/Rader
//! for awkward primes).

use std::cell::RefCell;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{ConverseError, Result};
use crate::tensor::{Spectrum, Tensor4};

/// Imaginary residue allowed by [`ifft2`], relative to `max |real| + 1`.
pub const REALNESS_TOLERANCE: f64 = 1e-10;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform_rows(buf: &mut [Complex64], len: usize, direction: FftDirection) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction));
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); src.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = src[i * cols + j];
        }
    }
    out
}

fn transform_plane(plane: &mut [Complex64], h: usize, w: usize, direction: FftDirection) {
    transform_rows(plane, w, direction);
    let mut cols = transpose(plane, h, w);
    transform_rows(&mut cols, h, direction);
    plane.copy_from_slice(&transpose(&cols, w, h));
}

/// Unnormalized forward 2-D DFT of one row-major `h x w` plane, in place.
pub fn fft2_plane(plane: &mut [Complex64], h: usize, w: usize) {
    transform_plane(plane, h, w, FftDirection::Forward);
}

/// Inverse 2-D DFT of one plane including the `1 / (h * w)` factor, in place.
pub fn ifft2_plane(plane: &mut [Complex64], h: usize, w: usize) {
    transform_plane(plane, h, w, FftDirection::Inverse);
    let scale = 1.0 / (h * w) as f64;
    plane.iter_mut().for_each(|z| *z *= scale);
}

/// Forward transform of a real plane.
pub fn fft2_real_plane(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = plane.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    fft2_plane(&mut buf, h, w);
    buf
}

/// Inverse transform of one plane followed by the realness check.
pub fn ifft2_real_plane(mut plane: Vec<Complex64>, h: usize, w: usize) -> Result<Vec<f64>> {
    ifft2_plane(&mut plane, h, w);
    take_real(&plane)
}

fn take_real(plane: &[Complex64]) -> Result<Vec<f64>> {
    let (max_real, max_imag) = plane.iter().fold((0.0f64, 0.0f64), |(r, i), z| (r.max(z.re.abs()), i.max(z.im.abs())));
    if max_imag.is_nan() || max_imag >= REALNESS_TOLERANCE * (max_real + 1.0) {
        return Err(ConverseError::RealnessViolation { max_imag, max_real });
    }
    if !max_real.is_finite() {
        return Err(ConverseError::NonFinite);
    }
    Ok(plane.iter().map(|z| z.re).collect())
}

pub fn fft2(t: &Tensor4) -> Spectrum {
    let [_, _, h, w] = t.shape();
    let mut data: Vec<Complex64> = t.data().iter().map(|&r| Complex64::new(r, 0.0)).collect();
    data.par_chunks_mut(h * w).for_each(|plane| fft2_plane(plane, h, w));
    Spectrum::from_parts(t.shape(), data)
}

/// Inverse transform returning the real part.
///
/// Fails with [`ConverseError::RealnessViolation`] when some plane keeps an
/// imaginary residue above `REALNESS_TOLERANCE * (max |real| + 1)`.
pub fn ifft2(s: &Spectrum) -> Result<Tensor4> {
    let [_, _, h, w] = s.shape();
    let planes: Vec<Vec<f64>> =
        s.data().par_chunks(h * w).map(|plane| ifft2_real_plane(plane.to_vec(), h, w)).collect::<Result<_>>()?;
    Ok(Tensor4::from_parts(s.shape(), planes.concat()))
}

/// Inverse transform keeping both parts, for callers that inspect the residue.
pub fn ifft2_complex(s: &Spectrum) -> Spectrum {
    let [_, _, h, w] = s.shape();
    let mut data = s.data().to_vec();
    data.par_chunks_mut(h * w).for_each(|plane| ifft2_plane(plane, h, w));
    Spectrum::from_parts(s.shape(), data)
}
