//! The Converse2D operator.
//!
//! Given an observation `y` of shape `[B, C, H, W]`, a depthwise kernel bank
//! and a per-channel regularization weight `lambda`, the operator returns the
//! `[B, C, sH, sW]` minimizer of
//!
//! ```text
//! || y - (x * k) decimated by s ||^2 + lambda || x - x0 ||^2
//! ```
//!
//! under circular boundary conditions, evaluated in closed form in the
//! frequency domain. With `L = conj(Fk) F(up_s y) + lambda F(x0)`:
//!
//! ```text
//! x* = F^-1( (L - conj(Fk) . tile_s( block_mean_s(Fk L) / (block_mean_s(|Fk|^2) + lambda) )) / lambda )
//! ```
//!
//! The input is padded before the solve and the output cropped afterwards so
//! that wrap-around artifacts land in the discarded margin.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ConverseError, Result};
use crate::fft::{fft2_plane, fft2_real_plane, ifft2_real_plane};
use crate::resample::{self, crop, interp_nearest, pad, upsample_zero, PadMode};
use crate::tensor::{Spectrum, Tensor4};

/// Offset subtracted from the bias before the sigmoid.
pub const LAMBDA_SHIFT: f64 = 9.0;
/// Floor added to every sigmoid output.
pub const LAMBDA_EPS: f64 = 1e-5;

/// How the values in a [`KernelBank`] are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// Raw parameters, softmax-normalized per channel at every evaluation.
    Logits,
    /// Weights used as given (e.g. a measured PSF).
    Weights,
}

/// Per-channel spatial kernels `[C, k_h, k_w]` with odd spatial sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    values: Vec<f64>,
    kind: KernelKind,
}

impl KernelBank {
    pub fn new(channels: usize, kernel_h: usize, kernel_w: usize, values: Vec<f64>, kind: KernelKind) -> Result<Self> {
        if channels == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(ConverseError::InvalidShape {
                shape: vec![channels, kernel_h, kernel_w],
                reason: "kernel bank dimensions must be at least 1".into(),
            });
        }
        if kernel_h.is_multiple_of(2) || kernel_w.is_multiple_of(2) {
            return Err(ConverseError::EvenKernel { kernel_h, kernel_w });
        }
        if values.len() != channels * kernel_h * kernel_w {
            return Err(ConverseError::InvalidShape {
                shape: vec![channels, kernel_h, kernel_w],
                reason: format!("expected {} values, got {}", channels * kernel_h * kernel_w, values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ConverseError::NonFinite);
        }
        Ok(Self { channels, kernel_h, kernel_w, values, kind })
    }

    pub fn from_logits(channels: usize, kernel_h: usize, kernel_w: usize, raw: Vec<f64>) -> Result<Self> {
        Self::new(channels, kernel_h, kernel_w, raw, KernelKind::Logits)
    }

    pub fn from_weights(channels: usize, kernel_h: usize, kernel_w: usize, weights: Vec<f64>) -> Result<Self> {
        Self::new(channels, kernel_h, kernel_w, weights, KernelKind::Weights)
    }

    /// Unit impulse at the kernel center in every channel.
    pub fn delta(channels: usize, kernel_h: usize, kernel_w: usize) -> Result<Self> {
        let mut values = vec![0.0; channels * kernel_h * kernel_w];
        let center = (kernel_h / 2) * kernel_w + kernel_w / 2;
        for c in 0..channels {
            values[c * kernel_h * kernel_w + center] = 1.0;
        }
        Self::from_weights(channels, kernel_h, kernel_w, values)
    }

    /// The same kernel repeated for `channels` channels. `self` must have one channel.
    pub fn broadcast(&self, channels: usize) -> Result<Self> {
        if self.channels == channels {
            return Ok(self.clone());
        }
        if self.channels != 1 {
            return Err(ConverseError::DimensionMismatch(format!(
                "cannot broadcast a {}-channel kernel bank to {channels} channels",
                self.channels
            )));
        }
        Self::new(channels, self.kernel_h, self.kernel_w, self.values.repeat(channels), self.kind)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn kernel_h(&self) -> usize {
        self.kernel_h
    }
    pub fn kernel_w(&self) -> usize {
        self.kernel_w
    }
    pub fn kind(&self) -> KernelKind {
        self.kind
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Normalized per-channel kernels, ready for [`p2o`].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    pub channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub data: Vec<f64>,
}

impl KernelWeights {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.kernel_h * self.kernel_w;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Per-channel softmax over all spatial positions of a logits bank.
/// Weight banks pass through unchanged.
pub fn normalize_kernel(k: &KernelBank) -> KernelWeights {
    let n = k.kernel_h * k.kernel_w;
    let data = match k.kind {
        KernelKind::Weights => k.values.clone(),
        KernelKind::Logits => k
            .values
            .chunks_exact(n)
            .flat_map(|raw| {
                let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = raw.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exp.iter().sum();
                exp.into_iter().map(move |e| e / total)
            })
            .collect(),
    };
    KernelWeights { channels: k.channels, kernel_h: k.kernel_h, kernel_w: k.kernel_w, data }
}

/// Per-channel regularization weight.
///
/// Normally parameterized by a bias `b` as `sigmoid(b - 9) + 1e-5`, which keeps
/// every weight inside `(1e-5, 1 + 1e-5)`. [`LambdaParam::fixed`] sets the
/// weights directly, as a command-line user or a limit test would.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "lowercase")]
pub enum LambdaParam {
    Bias(Vec<f64>),
    Fixed(Vec<f64>),
}

impl LambdaParam {
    pub fn from_bias(b: Vec<f64>) -> Result<Self> {
        if b.is_empty() || b.iter().any(|v| !v.is_finite()) {
            return Err(ConverseError::InvalidParameter("bias must be a non-empty finite vector".into()));
        }
        Ok(LambdaParam::Bias(b))
    }

    /// All-zero bias, the initial value for learned layers.
    pub fn zeros(channels: usize) -> Self {
        LambdaParam::Bias(vec![0.0; channels])
    }

    pub fn fixed(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ConverseError::InvalidParameter("lambda values must be finite and positive".into()));
        }
        Ok(LambdaParam::Fixed(values))
    }

    pub fn channels(&self) -> usize {
        match self {
            LambdaParam::Bias(v) | LambdaParam::Fixed(v) => v.len(),
        }
    }

    /// The stored bias or fixed values.
    pub fn raw(&self) -> &[f64] {
        match self {
            LambdaParam::Bias(v) | LambdaParam::Fixed(v) => v,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Effective per-channel regularization weights.
pub fn lambda_of(p: &LambdaParam) -> Vec<f64> {
    match p {
        LambdaParam::Bias(b) => b.iter().map(|&b| sigmoid(b - LAMBDA_SHIFT) + LAMBDA_EPS).collect(),
        LambdaParam::Fixed(v) => v.clone(),
    }
}

/// Choice of the prior estimate `x0` the regularizer pulls towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum X0Strategy {
    Zero,
    /// Nearest-neighbour upscaling of the (padded) input.
    InterpNearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConverseConfig {
    pub scale: usize,
    pub pad_mode: PadMode,
    pub pad_size: usize,
    pub x0: X0Strategy,
}

impl Default for ConverseConfig {
    /// Circular padding of 4 and an interpolated prior at scale 1.
    fn default() -> Self {
        Self { scale: 1, pad_mode: PadMode::Circular, pad_size: 4, x0: X0Strategy::InterpNearest }
    }
}

impl ConverseConfig {
    /// Scale `scale`, no padding.
    pub fn unpadded(scale: usize, x0: X0Strategy) -> Self {
        Self { scale, pad_mode: PadMode::Circular, pad_size: 0, x0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(ConverseError::InvalidParameter("scale must be at least 1".into()));
        }
        Ok(())
    }
}

/// Optical transfer functions `[1, C, target_h, target_w]` of a kernel bank.
///
/// Each kernel is zero-embedded at the top-left of the target plane and rolled
/// so that its center lands on index `(0, 0)` before the FFT.
pub fn p2o(k: &KernelWeights, target_h: usize, target_w: usize) -> Result<Spectrum> {
    let (kh, kw) = (k.kernel_h, k.kernel_w);
    if kh > target_h || kw > target_w {
        return Err(ConverseError::KernelTooLarge { kernel_h: kh, kernel_w: kw, target_h, target_w });
    }
    let (ch, cw) = (kh / 2, kw / 2);
    let n = target_h * target_w;
    let mut data = vec![Complex64::default(); k.channels * n];
    data.par_chunks_mut(n).enumerate().for_each(|(c, plane)| {
        let kernel = k.channel(c);
        for m in 0..kh {
            let row = (m + target_h - ch) % target_h;
            for q in 0..kw {
                let col = (q + target_w - cw) % target_w;
                plane[row * target_w + col] = Complex64::new(kernel[m * kw + q], 0.0);
            }
        }
        fft2_plane(plane, target_h, target_w);
    });
    Ok(Spectrum::from_parts([1, k.channels, target_h, target_w], data))
}

/// Plane-level block mean used inside the solve; swappable for fault injection.
pub(crate) type BlockMeanFn = fn(&[Complex64], usize, usize, usize) -> Vec<Complex64>;

fn check_operands(y: &Tensor4, k: &KernelBank, lam: &LambdaParam, cfg: &ConverseConfig) -> Result<()> {
    cfg.validate()?;
    let c = y.channels();
    if k.channels() != c || lam.channels() != c {
        return Err(ConverseError::DimensionMismatch(format!(
            "input has {c} channels, kernel bank {}, lambda {}",
            k.channels(),
            lam.channels()
        )));
    }
    let (ph, pw) = (y.height() + 2 * cfg.pad_size, y.width() + 2 * cfg.pad_size);
    if k.kernel_h() > ph || k.kernel_w() > pw {
        return Err(ConverseError::KernelTooLarge {
            kernel_h: k.kernel_h(),
            kernel_w: k.kernel_w(),
            target_h: ph,
            target_w: pw,
        });
    }
    Ok(())
}

fn initial_estimate(y_padded: &Tensor4, cfg: &ConverseConfig) -> Result<Option<Tensor4>> {
    match cfg.x0 {
        X0Strategy::Zero => Ok(None),
        X0Strategy::InterpNearest => interp_nearest(y_padded, cfg.scale).map(Some),
    }
}

/// Builds the prior `x0` exactly as the solver does: on the padded input,
/// at the upsampled size, then cropped back to the output frame.
pub fn prior_estimate(y: &Tensor4, cfg: &ConverseConfig) -> Result<Tensor4> {
    cfg.validate()?;
    let y_padded = pad(y, cfg.pad_mode, cfg.pad_size)?;
    let x0 = match initial_estimate(&y_padded, cfg)? {
        Some(x0) => x0,
        None => {
            let [nb, nc, h, w] = y_padded.shape();
            Tensor4::zeros([nb, nc, h * cfg.scale, w * cfg.scale])?
        }
    };
    crop(&x0, cfg.pad_size * cfg.scale)
}

/// Closed-form Converse2D solve for any scale.
///
/// With `L = conj(Fk) Fy_up + lambda Fx0` and `m = tile(mean(|Fk|^2))`, the
/// minimizer's spectrum `(L - conj(Fk) tile(mean(Fk L) / (mean(|Fk|^2) + lambda))) / lambda`
/// is evaluated as `(L + m Fx0 - conj(Fk) tile(mean(Fk Fx0))) / (m + lambda)`.
/// The two are equal because `Fy_up` is periodic with the block size, so its
/// part of the bracket cancels exactly and the remainder carries a factor
/// `lambda`. The second form never divides by `lambda` alone, so it stays
/// accurate for arbitrarily small `lambda`.
pub fn converse_solve(y: &Tensor4, k: &KernelBank, lam: &LambdaParam, cfg: &ConverseConfig) -> Result<Tensor4> {
    solve_with(y, k, lam, cfg, resample::block_mean_plane)
}

pub(crate) fn solve_with(
    y: &Tensor4,
    k: &KernelBank,
    lam: &LambdaParam,
    cfg: &ConverseConfig,
    block_mean: BlockMeanFn,
) -> Result<Tensor4> {
    check_operands(y, k, lam, cfg)?;
    let s = cfg.scale;
    let lambdas = lambda_of(lam);
    let y_padded = pad(y, cfg.pad_mode, cfg.pad_size)?;
    let x0 = initial_estimate(&y_padded, cfg)?;
    let y_up = upsample_zero(&y_padded, s)?;
    let [nb, nc, uh, uw] = y_up.shape();
    let (bh, bw) = (uh / s, uw / s);

    let fk = p2o(&normalize_kernel(k), uh, uw)?;
    // tile(block_mean(|Fk|^2)) depends only on the channel.
    let fk2_tiled: Vec<Vec<f64>> = fk
        .planes()
        .map(|plane| {
            let mag: Vec<Complex64> = plane.iter().map(|z| Complex64::new(z.norm_sqr(), 0.0)).collect();
            let mean = block_mean(&mag, uh, uw, s);
            resample::tile_plane(&mean, bh, bw, s).iter().map(|z| z.re).collect()
        })
        .collect();

    let planes: Vec<Vec<f64>> = (0..nb * nc)
        .into_par_iter()
        .map(|idx| {
            let c = idx % nc;
            let lambda = lambdas[c];
            let fk = fk.plane(0, c);
            let fy = fft2_real_plane(y_up.plane(idx / nc, c), uh, uw);

            let mut num: Vec<Complex64> = fk.iter().zip(&fy).map(|(k, y)| k.conj() * y).collect();
            if let Some(x0) = &x0 {
                let fx0 = fft2_real_plane(x0.plane(idx / nc, c), uh, uw);
                let fkx: Vec<Complex64> = fk.iter().zip(&fx0).map(|(k, x)| k * x).collect();
                let fkx_tiled = resample::tile_plane(&block_mean(&fkx, uh, uw, s), bh, bw, s);
                for (((n, x), k), (t, m)) in num.iter_mut().zip(&fx0).zip(fk).zip(fkx_tiled.iter().zip(&fk2_tiled[c])) {
                    *n += x * (lambda + m) - k.conj() * t;
                }
            }
            let fout: Vec<Complex64> = num.iter().zip(&fk2_tiled[c]).map(|(n, m)| n / (m + lambda)).collect();
            ifft2_real_plane(fout, uh, uw)
        })
        .collect::<Result<_>>()?;

    let out = Tensor4::new([nb, nc, uh, uw], planes.concat())?;
    crop(&out, cfg.pad_size * s)
}

/// Scale-1 solve, `x* = F^-1((conj(Fk) Fy + lambda Fx0) / (|Fk|^2 + lambda))`.
///
/// Same result as [`converse_solve`] at scale 1 with fewer transforms.
pub fn converse_s1_fast(y: &Tensor4, k: &KernelBank, lam: &LambdaParam, cfg: &ConverseConfig) -> Result<Tensor4> {
    if cfg.scale != 1 {
        return Err(ConverseError::ScaleNotOne(cfg.scale));
    }
    check_operands(y, k, lam, cfg)?;
    let lambdas = lambda_of(lam);
    let y_padded = pad(y, cfg.pad_mode, cfg.pad_size)?;
    let x0 = initial_estimate(&y_padded, cfg)?;
    let [nb, nc, h, w] = y_padded.shape();
    let fk = p2o(&normalize_kernel(k), h, w)?;

    let planes: Vec<Vec<f64>> = (0..nb * nc)
        .into_par_iter()
        .map(|idx| {
            let c = idx % nc;
            let lambda = lambdas[c];
            let fy = fft2_real_plane(y_padded.plane(idx / nc, c), h, w);
            let fx0 = x0.as_ref().map(|x0| fft2_real_plane(x0.plane(idx / nc, c), h, w));
            let fout: Vec<Complex64> = fk
                .plane(0, c)
                .iter()
                .zip(&fy)
                .enumerate()
                .map(|(i, (k, y))| {
                    let prior = fx0.as_ref().map_or(Complex64::default(), |f| f[i] * lambda);
                    (k.conj() * y + prior) / (k.norm_sqr() + lambda)
                })
                .collect();
            ifft2_real_plane(fout, h, w)
        })
        .collect::<Result<_>>()?;

    let out = Tensor4::new([nb, nc, h, w], planes.concat())?;
    crop(&out, cfg.pad_size)
}

/// Circular convolution of every `(b, c)` plane with its channel's kernel,
/// computed as `F^-1(Fk . F(x))`.
pub fn circular_convolve(x: &Tensor4, k: &KernelWeights) -> Result<Tensor4> {
    if k.channels != x.channels() {
        return Err(ConverseError::DimensionMismatch(format!(
            "input has {} channels, kernel bank {}",
            x.channels(),
            k.channels
        )));
    }
    let [nb, nc, h, w] = x.shape();
    let fk = p2o(k, h, w)?;
    let planes: Vec<Vec<f64>> = (0..nb * nc)
        .into_par_iter()
        .map(|idx| {
            let c = idx % nc;
            let fx = fft2_real_plane(x.plane(idx / nc, c), h, w);
            let prod = fx.iter().zip(fk.plane(0, c)).map(|(a, b)| a * b).collect();
            ifft2_real_plane(prod, h, w)
        })
        .collect::<Result<_>>()?;
    Tensor4::new([nb, nc, h, w], planes.concat())
}

/// The forward model `(x * k)` decimated by `s`, evaluated through the FFT.
pub fn forward_model(x: &Tensor4, k: &KernelWeights, s: usize) -> Result<Tensor4> {
    resample::decimate(&circular_convolve(x, k)?, s)
}

/// A Converse2D layer: kernel bank, regularization and configuration together.
#[derive(Debug, Clone, PartialEq)]
pub struct Converse2d {
    pub kernel: KernelBank,
    pub lambda: LambdaParam,
    pub config: ConverseConfig,
}

impl Converse2d {
    pub fn new(kernel: KernelBank, lambda: LambdaParam, config: ConverseConfig) -> Result<Self> {
        config.validate()?;
        if kernel.channels() != lambda.channels() {
            return Err(ConverseError::DimensionMismatch(format!(
                "kernel bank has {} channels, lambda {}",
                kernel.channels(),
                lambda.channels()
            )));
        }
        Ok(Self { kernel, lambda, config })
    }

    pub fn channels(&self) -> usize {
        self.kernel.channels()
    }

    pub fn forward(&self, y: &Tensor4) -> Result<Tensor4> {
        converse_solve(y, &self.kernel, &self.lambda, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::fft2;
    use crate::testing::{gaussian_vec, random_tensor, rel_err_inf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn unit_lambda(c: usize) -> LambdaParam {
        LambdaParam::fixed(vec![1.0; c]).unwrap()
    }

    #[test]
    fn uniform_softmax() {
        let k = KernelBank::from_logits(2, 5, 5, vec![0.0; 50]).unwrap();
        let w = normalize_kernel(&k);
        assert!(w.data.iter().all(|v| (v - 0.04).abs() < 1e-15));
    }

    #[test]
    fn saturated_softmax() {
        let mut raw = vec![0.0; 9];
        raw[4] = 20.0;
        let w = normalize_kernel(&KernelBank::from_logits(1, 3, 3, raw).unwrap());
        assert!(w.data[4] > 0.9999);
        assert!(w.data.iter().enumerate().all(|(i, v)| i == 4 || *v < 1e-8));
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let raw = gaussian_vec(&mut rng(1), 2 * 9);
        let w = normalize_kernel(&KernelBank::from_logits(2, 3, 3, raw.clone()).unwrap());
        for c in 0..2 {
            let ch = &raw[c * 9..(c + 1) * 9];
            let total: f64 = ch.iter().map(|v| v.exp()).sum();
            for (i, v) in ch.iter().enumerate() {
                assert!((w.channel(c)[i] - v.exp() / total).abs() < 1e-14);
            }
            assert!((w.channel(c).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.channel(c).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn weights_bypass_softmax() {
        let k = KernelBank::from_weights(1, 1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(normalize_kernel(&k).data, vec![0.2, 0.5, 0.3]);
    }

    #[test]
    fn even_kernels_are_rejected() {
        assert!(matches!(KernelBank::from_logits(1, 4, 3, vec![0.0; 12]), Err(ConverseError::EvenKernel { .. })));
    }

    #[test]
    fn lambda_parameterization() {
        let l = lambda_of(&LambdaParam::from_bias(vec![0.0, 9.0, 100.0]).unwrap());
        // 1 / (1 + e^9) + 1e-5
        assert!((l[0] - 1.333_945_759_862_317_3e-4).abs() < 1e-16, "{}", l[0]);
        assert!((l[1] - (0.5 + 1e-5)).abs() < 1e-15);
        assert!((l[2] - (1.0 + 1e-5)).abs() < 1e-12);
        assert_eq!(lambda_of(&LambdaParam::zeros(3)).len(), 3);
    }

    #[test]
    fn lambda_is_monotone_and_bounded() {
        // Beyond |b| ~ 30 the sigmoid term is below the ulp of 1e-5.
        let b: Vec<f64> = (-250..250).map(|i| i as f64 * 0.1).collect();
        let l = lambda_of(&LambdaParam::from_bias(b).unwrap());
        assert!(l.windows(2).all(|p| p[0] <= p[1]));
        assert!(l.iter().all(|&v| v > 1e-5 && v < 1.0 + 1e-5));
    }

    #[test]
    fn fixed_lambda_must_be_positive() {
        assert!(LambdaParam::fixed(vec![0.0]).is_err());
        assert!(LambdaParam::fixed(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn p2o_of_deltas_is_flat() {
        for (kh, size) in [(1, 4), (3, 4), (3, 7), (5, 6)] {
            let k = normalize_kernel(&KernelBank::delta(2, kh, kh).unwrap());
            let s = p2o(&k, size, size).unwrap();
            assert_eq!(s.shape(), [1, 2, size, size]);
            assert!(s.data().iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-12));
        }
    }

    #[test]
    fn p2o_of_uniform_kernel_matches_rolled_dft() {
        let k = normalize_kernel(&KernelBank::from_weights(1, 3, 3, vec![1.0 / 9.0; 9]).unwrap());
        let s = p2o(&k, 6, 6).unwrap();
        assert!((s.data()[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        // Rolled embedding: nonzeros at rows/cols {5, 0, 1}.
        for u in 0..6 {
            for v in 0..6 {
                let mut acc = Complex64::default();
                for i in [5usize, 0, 1] {
                    for j in [5usize, 0, 1] {
                        let phase = -2.0 * std::f64::consts::PI * ((u * i + v * j) as f64) / 6.0;
                        acc += Complex64::from_polar(1.0 / 9.0, phase);
                    }
                }
                assert!((s.get(0, 0, u, v) - acc).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn p2o_rejects_large_kernels() {
        let k = normalize_kernel(&KernelBank::delta(1, 5, 5).unwrap());
        assert!(matches!(p2o(&k, 4, 8), Err(ConverseError::KernelTooLarge { .. })));
    }

    #[test]
    fn delta_kernel_unit_lambda_zero_prior_halves() {
        let y = random_tensor(&mut rng(2), [2, 3, 5, 4]);
        let k = KernelBank::delta(3, 3, 3).unwrap();
        let cfg = ConverseConfig::unpadded(1, X0Strategy::Zero);
        let out = converse_solve(&y, &k, &unit_lambda(3), &cfg).unwrap();
        let half = y.map(|v| v / 2.0).unwrap();
        assert!(crate::testing::max_abs_diff(out.data(), half.data()) < 1e-12);
    }

    #[test]
    fn delta_kernel_with_input_prior_is_identity() {
        let y = random_tensor(&mut rng(3), [1, 2, 6, 6]);
        let k = KernelBank::delta(2, 3, 3).unwrap();
        let cfg = ConverseConfig::unpadded(1, X0Strategy::InterpNearest);
        for lam in [LambdaParam::zeros(2), LambdaParam::fixed(vec![0.3, 7.0]).unwrap()] {
            let out = converse_solve(&y, &k, &lam, &cfg).unwrap();
            assert!(crate::testing::max_abs_diff(out.data(), y.data()) < 1e-12);
        }
    }

    #[test]
    fn fast_path_limits() {
        let y = random_tensor(&mut rng(4), [1, 2, 8, 8]);
        let k = KernelBank::delta(2, 3, 3).unwrap();
        let cfg = ConverseConfig::unpadded(1, X0Strategy::Zero);

        let big = LambdaParam::fixed(vec![1e6; 2]).unwrap();
        let out = converse_s1_fast(&y, &k, &big, &cfg).unwrap();
        assert!(out.max_abs() < 1e-4 * y.max_abs());

        let small = LambdaParam::fixed(vec![0.01; 2]).unwrap();
        let out = converse_s1_fast(&y, &k, &small, &cfg).unwrap();
        let expected = y.map(|v| v / 1.01).unwrap();
        assert!(crate::testing::max_abs_diff(out.data(), expected.data()) < 1e-12);

        let cfg2 = ConverseConfig::unpadded(2, X0Strategy::Zero);
        assert_eq!(converse_s1_fast(&y, &k, &small, &cfg2), Err(ConverseError::ScaleNotOne(2)));
    }

    #[test]
    fn tiny_lambda_stays_real_and_consistent() {
        let mut r = rng(15);
        let k = KernelBank::from_logits(2, 3, 3, gaussian_vec(&mut r, 18)).unwrap();
        let lam = LambdaParam::fixed(vec![1e-12, 1e-9]).unwrap();
        for x0 in [X0Strategy::Zero, X0Strategy::InterpNearest] {
            for s in [1, 2, 3] {
                let y = random_tensor(&mut r, [1, 2, 6, 5]);
                let cfg = ConverseConfig::unpadded(s, x0);
                let out = converse_solve(&y, &k, &lam, &cfg).unwrap();
                if s == 1 {
                    let fast = converse_s1_fast(&y, &k, &lam, &cfg).unwrap();
                    assert!(rel_err_inf(out.data(), fast.data()) < 1e-8);
                }
            }
        }
    }

    #[test]
    fn fast_path_agrees_with_general_solve() {
        let mut r = rng(5);
        let y = random_tensor(&mut r, [2, 4, 8, 8]);
        let k = KernelBank::from_logits(4, 3, 3, gaussian_vec(&mut r, 36)).unwrap();
        let lam = LambdaParam::from_bias(vec![0.0, -2.0, 3.0, 9.0]).unwrap();
        for x0 in [X0Strategy::Zero, X0Strategy::InterpNearest] {
            for (mode, p) in [(PadMode::Circular, 0), (PadMode::Reflect, 2), (PadMode::Zero, 4)] {
                let cfg = ConverseConfig { scale: 1, pad_mode: mode, pad_size: p, x0 };
                let a = converse_solve(&y, &k, &lam, &cfg).unwrap();
                let b = converse_s1_fast(&y, &k, &lam, &cfg).unwrap();
                assert!(rel_err_inf(b.data(), a.data()) < 1e-10);
            }
        }
    }

    #[test]
    fn tikhonov_filter_matches_direct_formula() {
        let mut r = rng(6);
        let y = random_tensor(&mut r, [1, 2, 6, 5]);
        let k = KernelBank::from_logits(2, 3, 3, gaussian_vec(&mut r, 18)).unwrap();
        let lam = LambdaParam::fixed(vec![0.05, 0.2]).unwrap();
        let cfg = ConverseConfig::unpadded(1, X0Strategy::Zero);
        let out = converse_s1_fast(&y, &k, &lam, &cfg).unwrap();

        // Direct evaluation of conj(Fk) Fy / (|Fk|^2 + lambda) with a naive DFT kernel spectrum.
        let fy = fft2(&y);
        let w = normalize_kernel(&k);
        let mut spec = Vec::new();
        for c in 0..2 {
            for u in 0..6 {
                for v in 0..5 {
                    let mut fk = Complex64::default();
                    for m in 0..3usize {
                        for q in 0..3usize {
                            let (di, dj) = (m as f64 - 1.0, q as f64 - 1.0);
                            let phase = -2.0 * std::f64::consts::PI * (u as f64 * di / 6.0 + v as f64 * dj / 5.0);
                            fk += Complex64::from_polar(w.channel(c)[m * 3 + q], phase);
                        }
                    }
                    let lam_c = [0.05, 0.2][c];
                    spec.push(fk.conj() * fy.get(0, c, u, v) / (fk.norm_sqr() + lam_c));
                }
            }
        }
        let direct = crate::fft::ifft2(&Spectrum::new([1, 2, 6, 5], spec).unwrap()).unwrap();
        assert!(rel_err_inf(out.data(), direct.data()) < 1e-12);
    }

    #[test]
    fn shape_contract_over_padding() {
        let mut r = rng(7);
        let y = random_tensor(&mut r, [1, 2, 5, 7]);
        let k = KernelBank::from_logits(2, 5, 5, gaussian_vec(&mut r, 50)).unwrap();
        for s in 1..=3 {
            for mode in PadMode::ALL {
                for p in [0, 1, 3] {
                    if p == 0 && s == 1 && mode != PadMode::Circular {
                        continue;
                    }
                    let cfg = ConverseConfig { scale: s, pad_mode: mode, pad_size: p, x0: X0Strategy::InterpNearest };
                    let out = converse_solve(&y, &k, &LambdaParam::zeros(2), &cfg).unwrap();
                    assert_eq!(out.shape(), [1, 2, 5 * s, 7 * s], "s={s} {mode} p={p}");
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_operands() {
        let y = random_tensor(&mut rng(8), [1, 2, 4, 4]);
        let k = KernelBank::delta(3, 3, 3).unwrap();
        let cfg = ConverseConfig::unpadded(1, X0Strategy::Zero);
        assert!(matches!(
            converse_solve(&y, &k, &LambdaParam::zeros(2), &cfg),
            Err(ConverseError::DimensionMismatch(_))
        ));
        let k = KernelBank::delta(2, 5, 5).unwrap();
        assert!(matches!(
            converse_solve(&y, &k, &LambdaParam::zeros(2), &cfg),
            Err(ConverseError::KernelTooLarge { .. })
        ));
    }

    #[test]
    fn prior_pull_at_huge_lambda() {
        let mut r = rng(9);
        let y = random_tensor(&mut r, [1, 2, 4, 6]);
        let k = KernelBank::from_logits(2, 3, 3, gaussian_vec(&mut r, 18)).unwrap();
        let lam = LambdaParam::fixed(vec![1e8; 2]).unwrap();
        let cfg = ConverseConfig { scale: 2, pad_mode: PadMode::Replicate, pad_size: 1, x0: X0Strategy::InterpNearest };
        let out = converse_solve(&y, &k, &lam, &cfg).unwrap();
        let prior = prior_estimate(&y, &cfg).unwrap();
        assert!(rel_err_inf(out.data(), prior.data()) < 1e-6);
    }
}
