//! Converse2D: a depthwise reverse-convolution operator solved in closed form
//! in the frequency domain, a dense least-squares oracle that checks it, and
//! the Converse block built on top.

pub mod blocks;
pub mod checkpoint;
pub mod converse;
pub mod error;
pub mod fft;
pub mod kernel_file;
pub mod oracle;
pub mod resample;
pub mod tensor;
pub mod testing;
pub mod verify;

pub use blocks::{block_forward, gelu, layer_norm, net_forward, ChannelMix, ConverseBlock, LayerNorm, ToyConverseNet};
pub use converse::{
    circular_convolve, converse_s1_fast, converse_solve, forward_model, lambda_of, normalize_kernel, p2o,
    prior_estimate, Converse2d, ConverseConfig, KernelBank, KernelKind, KernelWeights, LambdaParam, X0Strategy,
};
pub use error::{ConverseError, Result};
pub use fft::{fft2, ifft2};
pub use num_complex::Complex64;
pub use resample::{block_mean, crop, decimate, interp_nearest, pad, tile, upsample_zero, PadMode};
pub use tensor::{Spectrum, Tensor4};
