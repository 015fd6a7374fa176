//! Plain-text kernel files.
//!
//! ```text
//! C k_h k_w
//! <k_h lines of k_w numbers>   # repeated C times
//! ```
//!
//! Values are taken as ready-to-use weights, so the softmax is skipped.
//! Blank lines and anything after `#` are ignored.

use std::path::Path;

use crate::converse::{KernelBank, KernelKind};
use crate::error::{ConverseError, Result};

fn malformed(msg: impl Into<String>) -> ConverseError {
    ConverseError::MalformedKernel(msg.into())
}

pub fn parse_kernel(text: &str) -> Result<KernelBank> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (_, header) = lines.next().ok_or_else(|| malformed("empty file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| malformed(format!("bad header token `{t}`"))))
        .collect::<Result<_>>()?;
    let [channels, kh, kw] = dims[..] else {
        return Err(malformed(format!("header must be `C k_h k_w`, got `{header}`")));
    };
    if channels == 0 || kh == 0 || kw == 0 {
        return Err(malformed("dimensions must be positive"));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(malformed(format!("kernel dimensions must be odd, got {kh}x{kw}")));
    }

    let mut values = Vec::with_capacity(channels * kh * kw);
    for _ in 0..channels * kh {
        let (n, line) = lines.next().ok_or_else(|| malformed(format!("expected {} kernel rows", channels * kh)))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(malformed(format!("line {n}: bad value `{t}`"))),
            })
            .collect::<Result<_>>()?;
        if row.len() != kw {
            return Err(malformed(format!("line {n}: expected {kw} values, got {}", row.len())));
        }
        values.extend(row);
    }
    if let Some((n, _)) = lines.next() {
        return Err(malformed(format!("line {n}: trailing data after {channels} kernels")));
    }
    KernelBank::new(channels, kh, kw, values, KernelKind::Weights)
}

pub fn format_kernel(k: &KernelBank) -> String {
    let (kh, kw) = (k.kernel_h(), k.kernel_w());
    let mut out = format!("{} {kh} {kw}\n", k.channels());
    for row in k.values().chunks_exact(kw) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_kernel_file(path: impl AsRef<Path>) -> Result<KernelBank> {
    parse_kernel(&std::fs::read_to_string(path)?)
}

pub fn write_kernel_file(path: impl AsRef<Path>, k: &KernelBank) -> Result<()> {
    Ok(std::fs::write(path, format_kernel(k))?)
}

/// Sampled isotropic Gaussian, normalized to unit sum.
pub fn gaussian_psf(size: usize, sigma: f64) -> Result<KernelBank> {
    if size.is_multiple_of(2) || sigma.is_nan() || sigma <= 0.0 {
        return Err(ConverseError::InvalidParameter(format!(
            "gaussian PSF needs an odd size and positive sigma, got {size} and {sigma}"
        )));
    }
    let c = (size / 2) as f64;
    let mut values: Vec<f64> = (0..size * size)
        .map(|idx| {
            let (i, j) = ((idx / size) as f64 - c, (idx % size) as f64 - c);
            (-(i * i + j * j) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    KernelBank::from_weights(1, size, size, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_channels_with_comments() {
        let text = "# demo\n2 1 3\n0.25 0.5 0.25\n\n0 1 0   # delta\n";
        let k = parse_kernel(text).unwrap();
        assert_eq!((k.channels(), k.kernel_h(), k.kernel_w()), (2, 1, 3));
        assert_eq!(k.values(), &[0.25, 0.5, 0.25, 0.0, 1.0, 0.0]);
        assert_eq!(k.kind(), KernelKind::Weights);
    }

    #[test]
    fn format_round_trips_exactly() {
        let k = gaussian_psf(7, 1.3).unwrap();
        assert_eq!(parse_kernel(&format_kernel(&k)).unwrap(), k);
    }

    #[test]
    fn rejects_malformed_input() {
        for text in [
            "",
            "1 3\n",
            "1 2 3\n1 2 3\n1 2 3\n",
            "1 1 3\n1 2\n",
            "1 1 3\n1 2 x\n",
            "1 1 3\n1 2 inf\n",
            "2 1 1\n1\n",
            "1 1 1\n1\n2\n",
            "0 1 1\n",
        ] {
            assert!(matches!(parse_kernel(text), Err(ConverseError::MalformedKernel(_))), "{text:?}");
        }
    }

    #[test]
    fn gaussian_is_normalized_and_symmetric() {
        let k = gaussian_psf(5, 1.0).unwrap();
        let v = k.values();
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(v[0], v[24]);
        assert_eq!(v[1], v[5]);
        assert!(v[12] > v[11]);
        assert!(gaussian_psf(4, 1.0).is_err());
    }
}
