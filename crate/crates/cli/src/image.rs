//! Netpbm image I/O (PGM for one channel, PPM for three).
//!
//! Pixels load into a `[1, C, H, W]` tensor scaled to `[0, 1]`. Reading
//! accepts ASCII (`P2`, `P3`) and binary (`P5`, `P6`) rasters with any
//! maxval up to 65535. Writing emits binary rasters after clamping, 8-bit
//! unless 16-bit is requested.

use std::path::Path;

use converse_core::Tensor4;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("malformed image: {0}")]
    Malformed(String),
}

type Result<T> = std::result::Result<T, ImageError>;

fn malformed(msg: impl Into<String>) -> ImageError {
    ImageError::Malformed(msg.into())
}

/// Cursor over the header, skipping whitespace and `#` comments.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&str> {
        self.skip_blank();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok().filter(|t| !t.is_empty())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token().ok_or_else(|| malformed(format!("missing {what}")))?;
        tok.parse().map_err(|_| malformed(format!("bad {what} `{tok}`")))
    }
}

pub fn decode_netpbm(bytes: &[u8]) -> Result<Tensor4> {
    let magic = bytes.get(..2).ok_or_else(|| malformed("file too short"))?;
    let (channels, binary) = match magic {
        b"P2" => (1, false),
        b"P3" => (3, false),
        b"P5" => (1, true),
        b"P6" => (3, true),
        _ => {
            return Err(ImageError::Unsupported(format!(
                "expected a PGM or PPM file (P2, P3, P5, P6), found magic {:?}",
                String::from_utf8_lossy(magic)
            )))
        }
    };
    let mut header = Header { bytes, pos: 2 };
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval = header.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed("image dimensions must be positive"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(malformed(format!("maxval {maxval} outside 1..=65535")));
    }

    let count = channels * height * width;
    let samples: Vec<usize> = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = header.pos + 1;
        let width_bytes = if maxval < 256 { 1 } else { 2 };
        let raster = bytes
            .get(start..start + count * width_bytes)
            .ok_or_else(|| malformed(format!("raster truncated, expected {count} samples")))?;
        if width_bytes == 1 {
            raster.iter().map(|&b| b as usize).collect()
        } else {
            raster.chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]]) as usize).collect()
        }
    } else {
        (0..count).map(|_| header.number("sample")).collect::<Result<_>>()?
    };
    if let Some(&bad) = samples.iter().find(|&&v| v > maxval) {
        return Err(malformed(format!("sample {bad} exceeds maxval {maxval}")));
    }

    // Interleaved samples become channel planes.
    let scale = maxval as f64;
    Tensor4::from_fn([1, channels, height, width], |_, c, i, j| samples[(i * width + j) * channels + c] as f64 / scale)
        .map_err(|e| malformed(e.to_string()))
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn maxval(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

pub fn encode_netpbm(image: &Tensor4) -> Result<Vec<u8>> {
    encode_netpbm_with_depth(image, BitDepth::Eight)
}

pub fn encode_netpbm_with_depth(image: &Tensor4, depth: BitDepth) -> Result<Vec<u8>> {
    let [nb, channels, height, width] = image.shape();
    let magic = match (nb, channels) {
        (1, 1) => "P5",
        (1, 3) => "P6",
        _ => {
            return Err(ImageError::Unsupported(format!(
                "can only write one image with 1 or 3 channels, got shape {:?}",
                image.shape()
            )))
        }
    };
    let maxval = depth.maxval();
    let mut out = format!("{magic}\n{width} {height}\n{maxval}\n").into_bytes();
    for i in 0..height {
        for j in 0..width {
            for c in 0..channels {
                let v = image.get(0, c, i, j);
                match depth {
                    BitDepth::Eight => out.push(quantize(v)),
                    BitDepth::Sixteen => out.extend(((v.clamp(0.0, 1.0) * maxval as f64).round() as u16).to_be_bytes()),
                }
            }
        }
    }
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor4> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io { path: path.display().to_string(), source })?;
    decode_netpbm(&bytes)
}

pub fn save_image(path: impl AsRef<Path>, image: &Tensor4) -> Result<()> {
    save_image_with_depth(path, image, BitDepth::Eight)
}

pub fn save_image_with_depth(path: impl AsRef<Path>, image: &Tensor4, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_netpbm_with_depth(image, depth)?)
        .map_err(|source| ImageError::Io { path: path.display().to_string(), source })
}

/// `10 log10(1 / MSE)` over every channel and pixel, after clamping both
/// images to `[0, 1]`. `None` when the images are identical.
///
/// Panics if the shapes differ.
pub fn psnr(a: &Tensor4, b: &Tensor4) -> Option<f64> {
    assert_eq!(a.shape(), b.shape(), "psnr needs equally shaped images");
    let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.clamp(0.0, 1.0) - y.clamp(0.0, 1.0)).powi(2)).sum();
    let mse = sq / a.len() as f64;
    (mse > 0.0).then(|| -10.0 * mse.log10())
}
