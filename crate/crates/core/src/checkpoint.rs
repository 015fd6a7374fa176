//! `CVNT1` parameter container for [`ToyConverseNet`].
//!
//! A checkpoint is a binary payload plus a JSON sidecar.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! | offset        | size      | content                                   |
//! |---------------|-----------|-------------------------------------------|
//! | 0             | 5         | ASCII magic `CVNT1`                       |
//! | 5             | 4         | `u32` tensor count `N`                    |
//! | 9             | 4 * N     | `u32` element count of each tensor        |
//! | 9 + 4 * N     | 8 * total | `f64` values, tensors in declaration order |
//!
//! Declaration order is `head.weight`, `head.bias`, then for each block `i`:
//! `norm1.gamma`, `norm1.beta`, `mix1_in.weight`, `mix1_in.bias`,
//! `converse.kernel`, `converse.lambda`, `mix1_out.weight`, `mix1_out.bias`,
//! `norm2.gamma`, `norm2.beta`, `mix2_in.weight`, `mix2_in.bias`,
//! `mix2_out.weight`, `mix2_out.bias` (names prefixed `blocks.{i}.`), and
//! finally `tail.weight`, `tail.bias`. Weights of 1x1 mixes are `[c_out, c_in]`
//! row-major; kernels are `[C, k_h, k_w]`.
//!
//! The sidecar ([`Manifest`]) lists every tensor's name and shape and the
//! non-numeric per-block settings (kernel/lambda interpretation and operator
//! configuration). Loading checks the two against each other, so a payload
//! cannot be silently reinterpreted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::{ChannelMix, ConverseBlock, LayerNorm, ToyConverseNet};
use crate::converse::{Converse2d, ConverseConfig, KernelBank, KernelKind, LambdaParam};
use crate::error::{ConverseError, Result};

pub const MAGIC: &[u8; 5] = b"CVNT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaKind {
    Bias,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSettings {
    pub kernel_kind: KernelKind,
    pub lambda_kind: LambdaKind,
    pub config: ConverseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub image_channels: usize,
    pub channels: usize,
    pub blocks: Vec<BlockSettings>,
    pub tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> ConverseError {
    ConverseError::MalformedCheckpoint(msg.into())
}

struct Writer {
    entries: Vec<TensorEntry>,
    values: Vec<f64>,
}

impl Writer {
    fn push(&mut self, name: String, shape: Vec<usize>, data: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(TensorEntry { name, shape });
        self.values.extend_from_slice(data);
    }

    fn mix(&mut self, prefix: &str, m: &ChannelMix) {
        self.push(format!("{prefix}.weight"), vec![m.c_out(), m.c_in()], m.weight());
        self.push(format!("{prefix}.bias"), vec![m.c_out()], m.bias());
    }

    fn norm(&mut self, prefix: &str, n: &LayerNorm) {
        self.push(format!("{prefix}.gamma"), vec![n.gamma.len()], &n.gamma);
        self.push(format!("{prefix}.beta"), vec![n.beta.len()], &n.beta);
    }
}

/// Serializes a network into the binary payload and its manifest.
pub fn encode(net: &ToyConverseNet) -> (Vec<u8>, Manifest) {
    let mut w = Writer { entries: Vec::new(), values: Vec::new() };
    let mut blocks = Vec::with_capacity(net.blocks.len());
    w.mix("head", &net.head);
    for (i, b) in net.blocks.iter().enumerate() {
        let p = format!("blocks.{i}");
        w.norm(&format!("{p}.norm1"), &b.norm1);
        w.mix(&format!("{p}.mix1_in"), &b.mix1_in);
        let k = &b.converse.kernel;
        w.push(format!("{p}.converse.kernel"), vec![k.channels(), k.kernel_h(), k.kernel_w()], k.values());
        w.push(format!("{p}.converse.lambda"), vec![b.converse.lambda.channels()], b.converse.lambda.raw());
        w.mix(&format!("{p}.mix1_out"), &b.mix1_out);
        w.norm(&format!("{p}.norm2"), &b.norm2);
        w.mix(&format!("{p}.mix2_in"), &b.mix2_in);
        w.mix(&format!("{p}.mix2_out"), &b.mix2_out);
        blocks.push(BlockSettings {
            kernel_kind: k.kind(),
            lambda_kind: match b.converse.lambda {
                LambdaParam::Bias(_) => LambdaKind::Bias,
                LambdaParam::Fixed(_) => LambdaKind::Fixed,
            },
            config: b.converse.config,
        });
    }
    w.mix("tail", &net.tail);

    let mut bytes = Vec::with_capacity(9 + 4 * w.entries.len() + 8 * w.values.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(w.entries.len() as u32).to_le_bytes());
    for e in &w.entries {
        bytes.extend_from_slice(&(e.shape.iter().product::<usize>() as u32).to_le_bytes());
    }
    for v in &w.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let manifest = Manifest {
        format: "CVNT1".into(),
        image_channels: net.image_channels(),
        channels: net.channels(),
        blocks,
        tensors: w.entries,
    };
    (bytes, manifest)
}

struct Reader<'a> {
    tensors: std::iter::Zip<std::slice::Iter<'a, TensorEntry>, std::vec::IntoIter<Vec<f64>>>,
}

impl Reader<'_> {
    fn take(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let (entry, data) = self.tensors.next().ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
        if entry.name != name {
            return Err(bad(format!("expected tensor `{name}`, found `{}`", entry.name)));
        }
        Ok((entry.shape.clone(), data))
    }

    fn vector(&mut self, name: &str) -> Result<Vec<f64>> {
        let (shape, data) = self.take(name)?;
        if shape.len() != 1 {
            return Err(bad(format!("`{name}` must be rank 1, got {shape:?}")));
        }
        Ok(data)
    }

    fn mix(&mut self, prefix: &str) -> Result<ChannelMix> {
        let (shape, weight) = self.take(&format!("{prefix}.weight"))?;
        let [c_out, c_in] = shape[..] else {
            return Err(bad(format!("`{prefix}.weight` must be rank 2, got {shape:?}")));
        };
        let bias = self.vector(&format!("{prefix}.bias"))?;
        ChannelMix::new(c_in, c_out, weight, bias)
    }

    fn norm(&mut self, prefix: &str) -> Result<LayerNorm> {
        Ok(LayerNorm { gamma: self.vector(&format!("{prefix}.gamma"))?, beta: self.vector(&format!("{prefix}.beta"))? })
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let slice = bytes.get(at..at + 4).ok_or_else(|| bad("truncated header"))?;
    Ok(u32::from_le_bytes(slice.try_into().expect("4 bytes")))
}

/// Rebuilds a network from a payload and its manifest.
pub fn decode(bytes: &[u8], manifest: &Manifest) -> Result<ToyConverseNet> {
    if bytes.get(..5) != Some(MAGIC.as_slice()) {
        return Err(bad("missing CVNT1 magic"));
    }
    if manifest.format != "CVNT1" {
        return Err(bad(format!("unsupported sidecar format `{}`", manifest.format)));
    }
    let count = read_u32(bytes, 5)? as usize;
    if count != manifest.tensors.len() {
        return Err(bad(format!("payload has {count} tensors, sidecar lists {}", manifest.tensors.len())));
    }
    let mut offset = 9 + 4 * count;
    let mut tensors = Vec::with_capacity(count);
    for (i, entry) in manifest.tensors.iter().enumerate() {
        let len = read_u32(bytes, 9 + 4 * i)? as usize;
        if len != entry.shape.iter().product::<usize>() {
            return Err(bad(format!("`{}` has {len} values but shape {:?}", entry.name, entry.shape)));
        }
        let raw = bytes.get(offset..offset + 8 * len).ok_or_else(|| bad("truncated payload"))?;
        tensors.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
        offset += 8 * len;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }

    let mut r = Reader { tensors: manifest.tensors.iter().zip(tensors) };
    let head = r.mix("head")?;
    let mut blocks = Vec::with_capacity(manifest.blocks.len());
    for (i, settings) in manifest.blocks.iter().enumerate() {
        let p = format!("blocks.{i}");
        let norm1 = r.norm(&format!("{p}.norm1"))?;
        let mix1_in = r.mix(&format!("{p}.mix1_in"))?;
        let (shape, values) = r.take(&format!("{p}.converse.kernel"))?;
        let [c, kh, kw] = shape[..] else {
            return Err(bad(format!("`{p}.converse.kernel` must be rank 3, got {shape:?}")));
        };
        let kernel = KernelBank::new(c, kh, kw, values, settings.kernel_kind)?;
        let raw = r.vector(&format!("{p}.converse.lambda"))?;
        let lambda = match settings.lambda_kind {
            LambdaKind::Bias => LambdaParam::from_bias(raw)?,
            LambdaKind::Fixed => LambdaParam::fixed(raw)?,
        };
        let converse = Converse2d::new(kernel, lambda, settings.config)?;
        let mix1_out = r.mix(&format!("{p}.mix1_out"))?;
        let norm2 = r.norm(&format!("{p}.norm2"))?;
        let mix2_in = r.mix(&format!("{p}.mix2_in"))?;
        let mix2_out = r.mix(&format!("{p}.mix2_out"))?;
        blocks.push(ConverseBlock::new(norm1, mix1_in, converse, mix1_out, norm2, mix2_in, mix2_out)?);
    }
    let tail = r.mix("tail")?;
    if let Some((extra, _)) = r.tensors.next() {
        return Err(bad(format!("unexpected tensor `{}`", extra.name)));
    }
    ToyConverseNet::new(head, blocks, tail)
}

/// Writes `<bin_path>` and its JSON sidecar.
pub fn save(net: &ToyConverseNet, bin_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
    let (bytes, manifest) = encode(net);
    std::fs::write(bin_path, bytes)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| ConverseError::Io(e.to_string()))?;
    std::fs::write(json_path, json)?;
    Ok(())
}

pub fn load(bin_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<ToyConverseNet> {
    let bytes = std::fs::read(bin_path)?;
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(json_path)?).map_err(|e| bad(format!("sidecar: {e}")))?;
    decode(&bytes, &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> ToyConverseNet {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = ToyConverseNet::random(&mut rng, 3, 4, 2).unwrap();
        net.blocks[1].converse.lambda = LambdaParam::fixed(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        net
    }

    #[test]
    fn header_layout() {
        let (bytes, manifest) = encode(&net());
        assert_eq!(&bytes[..5], b"CVNT1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize, manifest.tensors.len());
        assert_eq!(manifest.tensors.len(), 4 + 2 * 14);
        assert_eq!(manifest.tensors[0], TensorEntry { name: "head.weight".into(), shape: vec![4, 3] });
        assert_eq!(manifest.tensors[6].name, "blocks.0.converse.kernel");
        assert_eq!(manifest.tensors[6].shape, vec![4, 5, 5]);
        let total: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        assert_eq!(bytes.len(), 9 + 4 * manifest.tensors.len() + 8 * total);
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let (bin, json) = (dir.path().join("net.cvnt"), dir.path().join("net.json"));
        let original = net();
        save(&original, &bin, &json).unwrap();
        let loaded = load(&bin, &json).unwrap();
        assert_eq!(loaded, original);
        let (a, _) = encode(&original);
        assert_eq!(std::fs::read(&bin).unwrap(), a);

        let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(2), [1, 3, 12, 12]);
        assert_eq!(loaded.forward(&x).unwrap(), original.forward(&x).unwrap());
    }

    #[test]
    fn rejects_corruption() {
        let (bytes, manifest) = encode(&net());
        let mut wrong_magic = bytes.clone();
        wrong_magic[4] = b'2';
        assert!(decode(&wrong_magic, &manifest).is_err());
        assert!(decode(&bytes[..bytes.len() - 8], &manifest).is_err());

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra, &manifest).is_err());

        let mut renamed = manifest.clone();
        renamed.tensors[1].name = "head.offset".into();
        assert!(matches!(decode(&bytes, &renamed), Err(ConverseError::MalformedCheckpoint(_))));

        let mut reshaped = manifest.clone();
        reshaped.tensors[0].shape = vec![3, 4, 1];
        assert!(decode(&bytes, &reshaped).is_err());
    }
}
