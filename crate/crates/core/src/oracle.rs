//! Brute-force reference for the Converse2D solve.
//!
//! The circular-convolve-then-decimate map is materialized as a dense matrix
//! `A` and the regularized least-squares problem is solved through the normal
//! equations `(A^T A + lambda I) x = A^T y + lambda x0` with a Cholesky
//! factorization. Nothing here touches the FFT path, so agreement between
//! the two is a meaningful check. Intended for planes up to roughly 32x32.

use nalgebra::{DMatrix, DVector};

use crate::converse::{
    lambda_of, normalize_kernel, ConverseConfig, KernelBank, KernelWeights, LambdaParam, X0Strategy,
};
use crate::error::{ConverseError, Result};
use crate::resample::{crop, interp_nearest, pad};
use crate::tensor::Tensor4;

/// Dense matrix of `x -> (x * k) decimated by s` on an `h x w` circular domain.
///
/// Rows index the `(h / s) * (w / s)` decimated outputs in row-major order,
/// columns the `h * w` input pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub matrix: DMatrix<f64>,
    pub height: usize,
    pub width: usize,
    pub scale: usize,
}

impl DenseOperator {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols() {
            return Err(ConverseError::DimensionMismatch(format!(
                "operator takes {} inputs, got {}",
                self.cols(),
                x.len()
            )));
        }
        Ok((&self.matrix * DVector::from_column_slice(x)).as_slice().to_vec())
    }
}

/// Builds the forward matrix for a single `k_h x k_w` kernel.
///
/// Output pixel `(i, j)` reads the stencil centered at input `(i s, j s)`:
/// `sum_{m, q} k[m, q] x[(i s - m + k_h / 2) mod h, (j s - q + k_w / 2) mod w]`,
/// which is the same convention as multiplying by the center-rolled kernel
/// spectrum.
pub fn build_forward(
    kernel: &[f64],
    kernel_h: usize,
    kernel_w: usize,
    h: usize,
    w: usize,
    s: usize,
) -> Result<DenseOperator> {
    if kernel.len() != kernel_h * kernel_w {
        return Err(ConverseError::DimensionMismatch(format!(
            "kernel has {} values, expected {kernel_h}x{kernel_w}",
            kernel.len()
        )));
    }
    if kernel_h.is_multiple_of(2) || kernel_w.is_multiple_of(2) {
        return Err(ConverseError::EvenKernel { kernel_h, kernel_w });
    }
    if s == 0 || h == 0 || w == 0 || !h.is_multiple_of(s) || !w.is_multiple_of(s) {
        return Err(ConverseError::IndivisibleShape { height: h, width: w, stride: s });
    }
    if kernel_h > h || kernel_w > w {
        return Err(ConverseError::KernelTooLarge { kernel_h, kernel_w, target_h: h, target_w: w });
    }
    let (dh, dw) = (h / s, w / s);
    let (ch, cw) = (kernel_h / 2, kernel_w / 2);
    let mut matrix = DMatrix::zeros(dh * dw, h * w);
    for i in 0..dh {
        for j in 0..dw {
            let row = i * dw + j;
            for m in 0..kernel_h {
                let src_i = (i * s + h + ch - m) % h;
                for q in 0..kernel_w {
                    let src_j = (j * s + w + cw - q) % w;
                    matrix[(row, src_i * w + src_j)] += kernel[m * kernel_w + q];
                }
            }
        }
    }
    Ok(DenseOperator { matrix, height: h, width: w, scale: s })
}

fn check_lengths(a: &DenseOperator, x_len: usize, y_len: usize, x0_len: usize) -> Result<()> {
    if x_len != a.cols() || x0_len != a.cols() || y_len != a.rows() {
        return Err(ConverseError::DimensionMismatch(format!(
            "operator is {}x{}, got x {x_len}, y {y_len}, x0 {x0_len}",
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

/// Unique minimizer `(A^T A + lambda I)^-1 (A^T y + lambda x0)`.
pub fn solve_dense(a: &DenseOperator, y: &[f64], lam: f64, x0: &[f64]) -> Result<Vec<f64>> {
    check_lengths(a, x0.len(), y.len(), x0.len())?;
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(ConverseError::InvalidParameter(format!("lambda must be positive, got {lam}")));
    }
    let n = a.cols();
    let normal = a.matrix.tr_mul(&a.matrix) + DMatrix::identity(n, n) * lam;
    let rhs = a.matrix.tr_mul(&DVector::from_column_slice(y)) + DVector::from_column_slice(x0) * lam;
    let chol = normal
        .cholesky()
        .ok_or_else(|| ConverseError::InvalidParameter("normal matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs).as_slice().to_vec())
}

/// `||y - A x||^2 + lambda ||x - x0||^2`.
pub fn objective(a: &DenseOperator, x: &[f64], y: &[f64], lam: f64, x0: &[f64]) -> Result<f64> {
    check_lengths(a, x.len(), y.len(), x0.len())?;
    let ax = a.apply(x)?;
    let data: f64 = y.iter().zip(&ax).map(|(y, p)| (y - p).powi(2)).sum();
    let prior: f64 = x.iter().zip(x0).map(|(x, x0)| (x - x0).powi(2)).sum();
    Ok(data + lam * prior)
}

/// Spatial-domain forward model `(x * k)` decimated by `s`, by direct summation.
pub fn forward_model_direct(x: &Tensor4, k: &KernelWeights, s: usize) -> Result<Tensor4> {
    let [nb, nc, h, w] = x.shape();
    if k.channels != nc {
        return Err(ConverseError::DimensionMismatch(format!("input has {nc} channels, kernel bank {}", k.channels)));
    }
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(ConverseError::IndivisibleShape { height: h, width: w, stride: s });
    }
    let (kh, kw) = (k.kernel_h, k.kernel_w);
    let (ch, cw) = (kh as isize / 2, kw as isize / 2);
    Tensor4::from_fn([nb, nc, h / s, w / s], |b, c, i, j| {
        let plane = x.plane(b, c);
        let kernel = k.channel(c);
        let mut acc = 0.0;
        for m in 0..kh {
            let src_i = ((i * s) as isize + ch - m as isize).rem_euclid(h as isize) as usize;
            for q in 0..kw {
                let src_j = ((j * s) as isize + cw - q as isize).rem_euclid(w as isize) as usize;
                acc += kernel[m * kw + q] * plane[src_i * w + src_j];
            }
        }
        acc
    })
}

/// Dense-oracle counterpart of `converse_solve`: same padding, prior and
/// cropping, with every plane solved through the normal equations.
pub fn solve_tensor(y: &Tensor4, k: &KernelBank, lam: &LambdaParam, cfg: &ConverseConfig) -> Result<Tensor4> {
    cfg.validate()?;
    let s = cfg.scale;
    let y_padded = pad(y, cfg.pad_mode, cfg.pad_size)?;
    let [nb, nc, h, w] = y_padded.shape();
    if k.channels() != nc || lam.channels() != nc {
        return Err(ConverseError::DimensionMismatch(format!(
            "input has {nc} channels, kernel bank {}, lambda {}",
            k.channels(),
            lam.channels()
        )));
    }
    let (uh, uw) = (h * s, w * s);
    let x0 = match cfg.x0 {
        X0Strategy::Zero => Tensor4::zeros([nb, nc, uh, uw])?,
        X0Strategy::InterpNearest => interp_nearest(&y_padded, s)?,
    };
    let weights = normalize_kernel(k);
    let lambdas = lambda_of(lam);
    let operators: Vec<DenseOperator> = (0..nc)
        .map(|c| build_forward(weights.channel(c), k.kernel_h(), k.kernel_w(), uh, uw, s))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(nb * nc * uh * uw);
    for b in 0..nb {
        for c in 0..nc {
            // Planes are row-major; the oracle vectorizes them the same way.
            out.extend(solve_dense(&operators[c], y_padded.plane(b, c), lambdas[c], x0.plane(b, c))?);
        }
    }
    crop(&Tensor4::new([nb, nc, uh, uw], out)?, cfg.pad_size * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converse::{converse_solve, forward_model};
    use crate::testing::{gaussian_vec, max_abs_diff, random_tensor, rel_err_inf};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn softmax_kernel(rng: &mut ChaCha8Rng, c: usize, size: usize) -> KernelBank {
        KernelBank::from_logits(c, size, size, gaussian_vec(rng, c * size * size)).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity_or_selection() {
        let delta = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let a = build_forward(&delta, 3, 3, 4, 4, 1).unwrap();
        assert_eq!(a.matrix, DMatrix::identity(16, 16));

        let a = build_forward(&delta, 3, 3, 4, 4, 2).unwrap();
        assert_eq!((a.rows(), a.cols()), (4, 16));
        for (row, col) in [(0, 0), (1, 2), (2, 8), (3, 10)] {
            assert_eq!(a.matrix[(row, col)], 1.0);
            assert_eq!(a.matrix.row(row).sum(), 1.0);
        }
    }

    #[test]
    fn rows_carry_one_full_stencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = normalize_kernel(&softmax_kernel(&mut rng, 1, 3));
        let a = build_forward(&k.data, 3, 3, 6, 6, 3).unwrap();
        for r in 0..a.rows() {
            assert_eq!(a.matrix.row(r).iter().filter(|v| **v != 0.0).count(), 9);
        }
        // Row 0 is centered on input (0, 0); the kernel center sits there.
        assert_eq!(a.matrix[(0, 0)], k.data[4]);
    }

    #[test]
    fn matches_nested_loop_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let kernel = gaussian_vec(&mut rng, 9);
        let a = build_forward(&kernel, 3, 3, 4, 4, 1).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut direct = vec![0.0; 16];
            for i in 0..4i64 {
                for j in 0..4i64 {
                    for m in 0..3i64 {
                        for q in 0..3i64 {
                            let si = (i - (m - 1)).rem_euclid(4);
                            let sj = (j - (q - 1)).rem_euclid(4);
                            direct[(i * 4 + j) as usize] += kernel[(m * 3 + q) as usize] * x[(si * 4 + sj) as usize];
                        }
                    }
                }
            }
            assert!(max_abs_diff(&a.apply(&x).unwrap(), &direct) < 1e-13);
        }
    }

    #[test]
    fn forward_matrix_agrees_with_fft_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w, s, ks) in [(6, 6, 2, 3), (6, 9, 3, 5), (4, 8, 1, 3), (5, 7, 1, 5)] {
            let bank = softmax_kernel(&mut rng, 1, ks);
            let k = normalize_kernel(&bank);
            let x = random_tensor(&mut rng, [1, 1, h, w]);
            let a = build_forward(&k.data, ks, ks, h, w, s).unwrap();
            let dense = a.apply(x.data()).unwrap();
            let fft = forward_model(&x, &k, s).unwrap();
            let direct = forward_model_direct(&x, &k, s).unwrap();
            assert!(max_abs_diff(&dense, fft.data()) < 1e-11);
            assert!(max_abs_diff(&dense, direct.data()) < 1e-13);
        }
    }

    #[test]
    fn build_forward_errors() {
        let k = [1.0; 9];
        assert!(matches!(build_forward(&k, 3, 3, 5, 4, 2), Err(ConverseError::IndivisibleShape { .. })));
        assert!(matches!(build_forward(&k, 3, 3, 2, 2, 1), Err(ConverseError::KernelTooLarge { .. })));
        assert!(matches!(build_forward(&[1.0; 4], 2, 2, 4, 4, 1), Err(ConverseError::EvenKernel { .. })));
    }

    #[test]
    fn identity_operator_solutions() {
        let a = build_forward(&[1.0], 1, 1, 3, 3, 1).unwrap();
        let y: Vec<f64> = (1..=9).map(f64::from).collect();
        let x = solve_dense(&a, &y, 1.0, &[0.0; 9]).unwrap();
        assert!(max_abs_diff(&x, &y.iter().map(|v| v / 2.0).collect::<Vec<_>>()) < 1e-14);
        for lam in [1e-3, 0.5, 40.0] {
            assert!(max_abs_diff(&solve_dense(&a, &y, lam, &y).unwrap(), &y) < 1e-13);
        }
    }

    #[test]
    fn normal_equation_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kernel = gaussian_vec(&mut rng, 9);
        let a = build_forward(&kernel, 3, 3, 4, 4, 2).unwrap();
        let y: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = solve_dense(&a, &y, 0.1, &x0).unwrap();
        let xv = DVector::from_column_slice(&x);
        let lhs = a.matrix.tr_mul(&(&a.matrix * &xv)) + &xv * 0.1;
        let rhs = a.matrix.tr_mul(&DVector::from_column_slice(&y)) + DVector::from_column_slice(&x0) * 0.1;
        assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn solve_dense_errors() {
        let a = build_forward(&[1.0], 1, 1, 2, 2, 1).unwrap();
        assert!(matches!(solve_dense(&a, &[1.0; 3], 1.0, &[0.0; 4]), Err(ConverseError::DimensionMismatch(_))));
        assert!(matches!(solve_dense(&a, &[1.0; 4], 0.0, &[0.0; 4]), Err(ConverseError::InvalidParameter(_))));
        assert!(matches!(
            objective(&a, &[1.0; 4], &[1.0; 4], 1.0, &[0.0; 5]),
            Err(ConverseError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn objective_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kernel = gaussian_vec(&mut rng, 9);
        let a = build_forward(&kernel, 3, 3, 4, 4, 1).unwrap();
        let x0: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = a.apply(&x0).unwrap();
        assert!(objective(&a, &x0, &y, 0.7, &x0).unwrap().abs() < 1e-28);

        let id = build_forward(&[1.0], 1, 1, 4, 5, 1).unwrap();
        assert_eq!(objective(&id, &[0.0; 20], &[1.0; 20], 1.0, &[0.0; 20]).unwrap(), 20.0);
    }

    #[test]
    fn solution_is_a_strict_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = normalize_kernel(&softmax_kernel(&mut rng, 1, 3));
        let a = build_forward(&k.data, 3, 3, 6, 6, 2).unwrap();
        let y: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lam = 0.01;
        let x = solve_dense(&a, &y, lam, &x0).unwrap();
        let best = objective(&a, &x, &y, lam, &x0).unwrap();
        assert!(best <= objective(&a, &x0, &y, lam, &x0).unwrap());
        for _ in 0..100 {
            let d = gaussian_vec(&mut rng, 36);
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let xp: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x + 1e-3 * d / norm).collect();
            assert!(objective(&a, &xp, &y, lam, &x0).unwrap() > best);
        }
    }

    #[test]
    fn closed_form_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = random_tensor(&mut rng, [1, 2, 4, 4]);
        let k = softmax_kernel(&mut rng, 2, 3);
        let lam = LambdaParam::zeros(2);
        let cfg = ConverseConfig::unpadded(2, X0Strategy::Zero);
        let fast = converse_solve(&y, &k, &lam, &cfg).unwrap();
        let dense = solve_tensor(&y, &k, &lam, &cfg).unwrap();
        assert_eq!(fast.shape(), [1, 2, 8, 8]);
        assert!(rel_err_inf(fast.data(), dense.data()) < 1e-8);
    }

    #[test]
    fn closed_form_matches_dense_solve_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = random_tensor(&mut rng, [2, 1, 3, 4]);
        let k = softmax_kernel(&mut rng, 1, 3);
        let lam = LambdaParam::from_bias(vec![3.0]).unwrap();
        for mode in crate::resample::PadMode::ALL {
            let cfg = ConverseConfig { scale: 2, pad_mode: mode, pad_size: 1, x0: X0Strategy::InterpNearest };
            let fast = converse_solve(&y, &k, &lam, &cfg).unwrap();
            let dense = solve_tensor(&y, &k, &lam, &cfg).unwrap();
            assert!(rel_err_inf(fast.data(), dense.data()) < 1e-8, "{mode}");
        }
    }
}
