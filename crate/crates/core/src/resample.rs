//! Padding, cropping and the resampling primitives used by the solver:
//! zero-insertion upsampling, nearest interpolation, and the frequency-domain
//! block mean / tile pair.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ConverseError, Result};
use crate::tensor::{Spectrum, Tensor4};

/// Border handling for [`pad`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample.
    Reflect,
    /// Repeat the edge sample.
    Replicate,
    /// Wrap around.
    Circular,
}

impl PadMode {
    pub const ALL: [PadMode; 4] = [PadMode::Zero, PadMode::Reflect, PadMode::Replicate, PadMode::Circular];

    /// Maps a padded coordinate `i - p` (possibly out of range) into `0..n`,
    /// or `None` where the mode fills with zero.
    fn source_index(self, i: isize, n: usize) -> Option<usize> {
        let n = n as isize;
        if (0..n).contains(&i) {
            return Some(i as usize);
        }
        match self {
            PadMode::Zero => None,
            PadMode::Circular => Some(i.rem_euclid(n) as usize),
            PadMode::Replicate => Some(i.clamp(0, n - 1) as usize),
            PadMode::Reflect => Some(if i < 0 { -i } else { 2 * (n - 1) - i } as usize),
        }
    }
}

impl std::fmt::Display for PadMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PadMode::Zero => "zero",
            PadMode::Reflect => "reflect",
            PadMode::Replicate => "replicate",
            PadMode::Circular => "circular",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for PadMode {
    type Err = ConverseError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" | "zeros" | "constant" => Ok(PadMode::Zero),
            "reflect" => Ok(PadMode::Reflect),
            "replicate" | "edge" => Ok(PadMode::Replicate),
            "circular" | "wrap" => Ok(PadMode::Circular),
            other => Err(ConverseError::InvalidParameter(format!("unknown padding mode `{other}`"))),
        }
    }
}

/// Adds `p` pixels on every spatial border.
pub fn pad(t: &Tensor4, mode: PadMode, p: usize) -> Result<Tensor4> {
    let [nb, nc, h, w] = t.shape();
    if p == 0 {
        return Ok(t.clone());
    }
    if mode == PadMode::Reflect && (p >= h || p >= w) {
        return Err(ConverseError::PadTooLarge { pad: p, height: h, width: w });
    }
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let rows: Vec<Option<usize>> = (0..ph).map(|i| mode.source_index(i as isize - p as isize, h)).collect();
    let cols: Vec<Option<usize>> = (0..pw).map(|j| mode.source_index(j as isize - p as isize, w)).collect();
    let mut out = Vec::with_capacity(nb * nc * ph * pw);
    for plane in t.planes() {
        for row in &rows {
            for col in &cols {
                out.push(match (row, col) {
                    (Some(i), Some(j)) => plane[i * w + j],
                    _ => 0.0,
                });
            }
        }
    }
    Ok(Tensor4::from_parts([nb, nc, ph, pw], out))
}

/// Removes `p` pixels from every spatial border; the inverse of [`pad`].
pub fn crop(t: &Tensor4, p: usize) -> Result<Tensor4> {
    let [nb, nc, h, w] = t.shape();
    if p == 0 {
        return Ok(t.clone());
    }
    if h <= 2 * p || w <= 2 * p {
        return Err(ConverseError::CropTooLarge { crop: p, height: h, width: w });
    }
    let (ch, cw) = (h - 2 * p, w - 2 * p);
    let mut out = Vec::with_capacity(nb * nc * ch * cw);
    for plane in t.planes() {
        for i in p..h - p {
            out.extend_from_slice(&plane[i * w + p..i * w + w - p]);
        }
    }
    Ok(Tensor4::from_parts([nb, nc, ch, cw], out))
}

fn check_factor(s: usize) -> Result<()> {
    if s == 0 {
        return Err(ConverseError::InvalidParameter("scale factor must be at least 1".into()));
    }
    Ok(())
}

/// Places each sample at `(i * s, j * s)` of an `s`-times larger zero plane.
pub fn upsample_zero(t: &Tensor4, s: usize) -> Result<Tensor4> {
    check_factor(s)?;
    let [nb, nc, h, w] = t.shape();
    let (uh, uw) = (h * s, w * s);
    let mut out = vec![0.0; nb * nc * uh * uw];
    for (src, dst) in t.planes().zip(out.chunks_exact_mut(uh * uw)) {
        for i in 0..h {
            for j in 0..w {
                dst[i * s * uw + j * s] = src[i * w + j];
            }
        }
    }
    Ok(Tensor4::from_parts([nb, nc, uh, uw], out))
}

/// Keeps every `s`-th sample starting from the upper-left one.
pub fn decimate(t: &Tensor4, s: usize) -> Result<Tensor4> {
    check_factor(s)?;
    let [nb, nc, h, w] = t.shape();
    if h % s != 0 || w % s != 0 {
        return Err(ConverseError::IndivisibleShape { height: h, width: w, stride: s });
    }
    let (dh, dw) = (h / s, w / s);
    let mut out = Vec::with_capacity(nb * nc * dh * dw);
    for plane in t.planes() {
        for i in 0..dh {
            for j in 0..dw {
                out.push(plane[i * s * w + j * s]);
            }
        }
    }
    Ok(Tensor4::from_parts([nb, nc, dh, dw], out))
}

/// Nearest-neighbour upscaling: `out[i, j] = t[i / s, j / s]`.
pub fn interp_nearest(t: &Tensor4, s: usize) -> Result<Tensor4> {
    check_factor(s)?;
    let [nb, nc, h, w] = t.shape();
    let (uh, uw) = (h * s, w * s);
    let mut out = Vec::with_capacity(nb * nc * uh * uw);
    for plane in t.planes() {
        for i in 0..uh {
            let row = &plane[(i / s) * w..(i / s + 1) * w];
            for j in 0..uw {
                out.push(row[j / s]);
            }
        }
    }
    Ok(Tensor4::from_parts([nb, nc, uh, uw], out))
}

/// Plane-level block mean; see [`block_mean`]. `h` and `w` must be multiples of `stride`.
pub(crate) fn block_mean_plane(plane: &[Complex64], h: usize, w: usize, stride: usize) -> Vec<Complex64> {
    let (bh, bw) = (h / stride, w / stride);
    let scale = 1.0 / (stride * stride) as f64;
    let mut out = vec![Complex64::default(); bh * bw];
    for a in 0..stride {
        for u in 0..bh {
            let row = (u + a * bh) * w;
            for b in 0..stride {
                let src = &plane[row + b * bw..row + (b + 1) * bw];
                for (o, z) in out[u * bw..(u + 1) * bw].iter_mut().zip(src) {
                    *o += z;
                }
            }
        }
    }
    out.iter_mut().for_each(|z| *z *= scale);
    out
}

/// Plane-level tiling; see [`tile`].
pub(crate) fn tile_plane(plane: &[Complex64], h: usize, w: usize, stride: usize) -> Vec<Complex64> {
    let tw = w * stride;
    let mut out = Vec::with_capacity(h * stride * tw);
    for _ in 0..stride {
        for u in 0..h {
            let row = &plane[u * w..(u + 1) * w];
            for _ in 0..stride {
                out.extend_from_slice(row);
            }
        }
    }
    out
}

/// Averages the `stride * stride` distinct sub-blocks of each plane.
///
/// `out[u, v] = mean over (a, b) of in[u + a * H / stride, v + b * W / stride]`.
/// Applied to a spectrum, this is the frequency-domain counterpart of
/// decimating the underlying signal by `stride`.
pub fn block_mean(s: &Spectrum, stride: usize) -> Result<Spectrum> {
    check_factor(stride)?;
    let [nb, nc, h, w] = s.shape();
    if h % stride != 0 || w % stride != 0 {
        return Err(ConverseError::IndivisibleShape { height: h, width: w, stride });
    }
    let data: Vec<Complex64> = s.planes().flat_map(|plane| block_mean_plane(plane, h, w, stride)).collect();
    Ok(Spectrum::from_parts([nb, nc, h / stride, w / stride], data))
}

/// Repeats each plane `stride` times along both spatial axes.
pub fn tile(s: &Spectrum, stride: usize) -> Result<Spectrum> {
    check_factor(stride)?;
    let [nb, nc, h, w] = s.shape();
    let data: Vec<Complex64> = s.planes().flat_map(|plane| tile_plane(plane, h, w, stride)).collect();
    Ok(Spectrum::from_parts([nb, nc, h * stride, w * stride], data))
}
