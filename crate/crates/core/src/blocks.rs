//! Converse blocks and a forward-only toy network.
//!
//! A block runs two residual branches:
//!
//! ```text
//! u   = x + mix1_out(gelu(converse(gelu(mix1_in(norm1(x))))))
//! out = u + mix2_out(gelu(mix2_in(norm2(u))))
//! ```
//!
//! The Converse2D layer handles spatial mixing; the 1x1 channel mixes handle
//! everything across channels. Blocks always run the operator at scale 1.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::converse::{Converse2d, ConverseConfig, KernelBank, LambdaParam};
use crate::error::{ConverseError, Result};
use crate::tensor::Tensor4;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// A 1x1 convolution: `out[b, :, i, j] = weight . in[b, :, i, j] + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMix {
    c_in: usize,
    c_out: usize,
    /// Row-major `[c_out, c_in]`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl ChannelMix {
    pub fn new(c_in: usize, c_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if c_in == 0 || c_out == 0 || weight.len() != c_in * c_out || bias.len() != c_out {
            return Err(ConverseError::InvalidShape {
                shape: vec![c_out, c_in],
                reason: format!("got {} weights and {} biases", weight.len(), bias.len()),
            });
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(ConverseError::NonFinite);
        }
        Ok(Self { c_in, c_out, weight, bias })
    }

    pub fn identity(c: usize) -> Self {
        let mut weight = vec![0.0; c * c];
        weight.iter_mut().step_by(c + 1).for_each(|v| *v = 1.0);
        Self { c_in: c, c_out: c, weight, bias: vec![0.0; c] }
    }

    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self { c_in, c_out, weight: vec![0.0; c_in * c_out], bias: vec![0.0; c_out] }
    }

    /// Weights uniform in `[-1/sqrt(c_in), 1/sqrt(c_in))`, zero bias.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, c_in: usize, c_out: usize) -> Self {
        let bound = 1.0 / (c_in as f64).sqrt();
        let dist = Uniform::new(-bound, bound).expect("valid bound");
        let weight = (0..c_in * c_out).map(|_| dist.sample(rng)).collect();
        Self { c_in, c_out, weight, bias: vec![0.0; c_out] }
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }
    pub fn c_out(&self) -> usize {
        self.c_out
    }
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn apply(&self, t: &Tensor4) -> Result<Tensor4> {
        let [nb, nc, h, w] = t.shape();
        if nc != self.c_in {
            return Err(ConverseError::DimensionMismatch(format!(
                "channel mix expects {} channels, got {nc}",
                self.c_in
            )));
        }
        let n = h * w;
        let mut out = vec![0.0; nb * self.c_out * n];
        for b in 0..nb {
            for o in 0..self.c_out {
                let dst = &mut out[(b * self.c_out + o) * n..(b * self.c_out + o + 1) * n];
                dst.fill(self.bias[o]);
                for i in 0..self.c_in {
                    let wgt = self.weight[o * self.c_in + i];
                    if wgt != 0.0 {
                        dst.iter_mut().zip(t.plane(b, i)).for_each(|(d, x)| *d += wgt * x);
                    }
                }
            }
        }
        Tensor4::new([nb, self.c_out, h, w], out)
    }
}

/// Per-channel affine parameters of a layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNorm {
    pub fn new(c: usize) -> Self {
        Self { gamma: vec![1.0; c], beta: vec![0.0; c] }
    }

    pub fn apply(&self, t: &Tensor4) -> Result<Tensor4> {
        layer_norm(t, &self.gamma, &self.beta, LAYER_NORM_EPS)
    }
}

/// Normalizes across channels at every `(b, i, j)`, then scales and shifts
/// per channel: `gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn layer_norm(t: &Tensor4, gamma: &[f64], beta: &[f64], eps: f64) -> Result<Tensor4> {
    let [nb, nc, h, w] = t.shape();
    if gamma.len() != nc || beta.len() != nc {
        return Err(ConverseError::DimensionMismatch(format!(
            "layer norm over {nc} channels got {} scales and {} shifts",
            gamma.len(),
            beta.len()
        )));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(ConverseError::InvalidParameter(format!("layer norm eps must be positive, got {eps}")));
    }
    let n = h * w;
    let data = t.data();
    let mut out = vec![0.0; data.len()];
    for b in 0..nb {
        let base = b * nc * n;
        for p in 0..n {
            let at = |c: usize| base + c * n + p;
            let mean = (0..nc).map(|c| data[at(c)]).sum::<f64>() / nc as f64;
            let var = (0..nc).map(|c| (data[at(c)] - mean).powi(2)).sum::<f64>() / nc as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..nc {
                out[at(c)] = gamma[c] * (data[at(c)] - mean) * inv + beta[c];
            }
        }
    }
    Tensor4::new(t.shape(), out)
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu(t: &Tensor4) -> Result<Tensor4> {
    t.map(gelu_scalar)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConverseBlock {
    pub norm1: LayerNorm,
    pub mix1_in: ChannelMix,
    pub converse: Converse2d,
    pub mix1_out: ChannelMix,
    pub norm2: LayerNorm,
    pub mix2_in: ChannelMix,
    pub mix2_out: ChannelMix,
}

impl ConverseBlock {
    /// Checks that every part agrees on the channel count and that the
    /// operator runs at scale 1.
    pub fn new(
        norm1: LayerNorm,
        mix1_in: ChannelMix,
        converse: Converse2d,
        mix1_out: ChannelMix,
        norm2: LayerNorm,
        mix2_in: ChannelMix,
        mix2_out: ChannelMix,
    ) -> Result<Self> {
        let c = mix1_in.c_in();
        let consistent = norm1.gamma.len() == c
            && norm1.beta.len() == c
            && mix1_in.c_out() == c
            && converse.channels() == c
            && mix1_out.c_in() == c
            && mix1_out.c_out() == c
            && norm2.gamma.len() == c
            && norm2.beta.len() == c
            && mix2_in.c_in() == c
            && mix2_out.c_in() == mix2_in.c_out()
            && mix2_out.c_out() == c;
        if !consistent {
            return Err(ConverseError::DimensionMismatch(format!("block parts disagree on {c} channels")));
        }
        if converse.config.scale != 1 {
            return Err(ConverseError::InvalidParameter(format!(
                "converse blocks run at scale 1, got {}",
                converse.config.scale
            )));
        }
        Ok(Self { norm1, mix1_in, converse, mix1_out, norm2, mix2_in, mix2_out })
    }

    /// Default initialization: uniform channel mixes with zero bias, Gaussian
    /// kernel logits, zero lambda bias and unit layer norms.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        channels: usize,
        hidden: usize,
        kernel_size: usize,
        config: ConverseConfig,
    ) -> Result<Self> {
        let logits = (0..channels * kernel_size * kernel_size).map(|_| StandardNormal.sample(rng)).collect();
        let kernel = KernelBank::from_logits(channels, kernel_size, kernel_size, logits)?;
        let mix1_in = ChannelMix::random(rng, channels, channels);
        let mix1_out = ChannelMix::random(rng, channels, channels);
        let mix2_in = ChannelMix::random(rng, channels, hidden);
        let mix2_out = ChannelMix::random(rng, hidden, channels);
        Self::new(
            LayerNorm::new(channels),
            mix1_in,
            Converse2d::new(kernel, LambdaParam::zeros(channels), config)?,
            mix1_out,
            LayerNorm::new(channels),
            mix2_in,
            mix2_out,
        )
    }

    pub fn channels(&self) -> usize {
        self.mix1_in.c_in()
    }

    /// The spatial branch before its residual add.
    pub fn spatial_branch(&self, x: &Tensor4) -> Result<Tensor4> {
        let t = self.mix1_in.apply(&self.norm1.apply(x)?)?;
        let t = self.converse.forward(&gelu(&t)?)?;
        self.mix1_out.apply(&gelu(&t)?)
    }

    /// The channel MLP branch before its residual add.
    pub fn channel_branch(&self, u: &Tensor4) -> Result<Tensor4> {
        let t = self.mix2_in.apply(&self.norm2.apply(u)?)?;
        self.mix2_out.apply(&gelu(&t)?)
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        if x.channels() != self.channels() {
            return Err(ConverseError::DimensionMismatch(format!(
                "block expects {} channels, got {}",
                self.channels(),
                x.channels()
            )));
        }
        let u = x.axpby(1.0, &self.spatial_branch(x)?, 1.0)?;
        u.axpby(1.0, &self.channel_branch(&u)?, 1.0)
    }
}

pub fn block_forward(x: &Tensor4, block: &ConverseBlock) -> Result<Tensor4> {
    block.forward(x)
}

/// `head -> blocks -> tail`, all 1x1 mixes around a stack of Converse blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConverseNet {
    pub head: ChannelMix,
    pub blocks: Vec<ConverseBlock>,
    pub tail: ChannelMix,
}

impl ToyConverseNet {
    pub fn new(head: ChannelMix, blocks: Vec<ConverseBlock>, tail: ChannelMix) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(ConverseError::InvalidParameter("a network needs at least one block".into()));
        };
        let c = first.channels();
        if head.c_out() != c || tail.c_in() != c || blocks.iter().any(|b| b.channels() != c) {
            return Err(ConverseError::DimensionMismatch(format!("network parts disagree on {c} channels")));
        }
        Ok(Self { head, blocks, tail })
    }

    /// Randomly initialized network with `n_blocks` blocks of width `channels`,
    /// 5x5 kernels and the default operator configuration.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        image_channels: usize,
        channels: usize,
        n_blocks: usize,
    ) -> Result<Self> {
        let head = ChannelMix::random(rng, image_channels, channels);
        let blocks = (0..n_blocks)
            .map(|_| ConverseBlock::random(rng, channels, channels, 5, ConverseConfig::default()))
            .collect::<Result<Vec<_>>>()?;
        let tail = ChannelMix::random(rng, channels, image_channels);
        Self::new(head, blocks, tail)
    }

    pub fn image_channels(&self) -> usize {
        self.head.c_in()
    }

    pub fn channels(&self) -> usize {
        self.head.c_out()
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut t = self.head.apply(x)?;
        for block in &self.blocks {
            t = block.forward(&t)?;
        }
        self.tail.apply(&t)
    }
}

pub fn net_forward(x: &Tensor4, net: &ToyConverseNet) -> Result<Tensor4> {
    net.forward(x)
}
