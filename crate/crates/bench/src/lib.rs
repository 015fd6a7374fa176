//! Seeded fixtures shared by the benchmarks.

use converse_core::testing::{gaussian_vec, random_tensor};
use converse_core::{ConverseConfig, KernelBank, LambdaParam, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const KERNEL_SIZE: usize = 5;

/// A solver input: observation, kernel bank, regularization and settings.
pub struct Problem {
    pub y: Tensor4,
    pub kernel: KernelBank,
    pub lambda: LambdaParam,
    pub config: ConverseConfig,
}

/// Random `[1, channels, height, width]` problem with softmax kernels and
/// the default configuration at `scale`.
pub fn problem(height: usize, width: usize, channels: usize, scale: usize, seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = random_tensor(&mut rng, [1, channels, height, width]);
    let logits = gaussian_vec(&mut rng, channels * KERNEL_SIZE * KERNEL_SIZE);
    Problem {
        y,
        kernel: KernelBank::from_logits(channels, KERNEL_SIZE, KERNEL_SIZE, logits).expect("finite logits"),
        lambda: LambdaParam::zeros(channels),
        config: ConverseConfig { scale, ..ConverseConfig::default() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded_and_solvable() {
        let a = problem(8, 6, 2, 2, 7);
        let b = problem(8, 6, 2, 2, 7);
        assert_eq!(a.y, b.y);
        assert_eq!(a.kernel, b.kernel);
        let out = converse_core::converse_solve(&a.y, &a.kernel, &a.lambda, &a.config).unwrap();
        assert_eq!(out.shape(), [1, 2, 16, 12]);
    }
}
