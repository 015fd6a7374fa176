//! JSON reports printed on standard output.

use converse_core::ConverseConfig;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Settings a restoration ran with, echoed back verbatim.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestoreConfig {
    pub input: String,
    pub kernel: String,
    pub output: String,
    pub reference: Option<String>,
    pub lambda: f64,
    #[serde(flatten)]
    pub solver: ConverseConfig,
    pub threads: usize,
}

/// L2 norms of the two terms of the objective at the unclamped output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    /// `||decimate(k * x) - y||`
    pub data: f64,
    /// `||x - x0||`
    pub prior: f64,
}

/// Report of `deconv` and `wiener`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub config: RestoreConfig,
    pub input_shape: ImageShape,
    pub output_shape: ImageShape,
    /// Wall time of the solve alone.
    pub runtime_ms: f64,
    /// PSNR of the clamped output against `psnr_against`; null when identical.
    pub psnr: Option<f64>,
    /// `"reference"`, `"input"`, or null when no same-sized image exists.
    pub psnr_against: Option<&'static str>,
    /// PSNR of the input against the reference, when both have the same shape.
    pub input_psnr: Option<f64>,
    pub residual: Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub solver: ConverseConfig,
    pub threads: usize,
}

/// Report of `bench`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub command: &'static str,
    pub config: BenchConfig,
    /// Median over the timed repetitions.
    pub runtime_ms: f64,
    pub warmup_ms: f64,
    pub samples_ms: Vec<f64>,
}
