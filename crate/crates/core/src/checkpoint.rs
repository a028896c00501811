//! The `TRCK` tensor container.
//!
//! Little-endian layout:
//!
//! ```text
//! "TRCK" | version u32 | descriptor len u32 | descriptor UTF-8 | epoch u32
//!        | tensor count u32 | per tensor: name len u32 | name UTF-8
//!        | rank u32 | extents u32 x rank | f32 x prod(extents)
//! ```
//!
//! Model checkpoints carry the model descriptor text; the autoencoder and
//! detector files reuse the container with their own descriptors.

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::nn::{ModelSpec, ParamSet};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"TRCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub descriptor: String,
    pub epoch: u32,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> std::result::Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor `{name}`")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_str(&mut out, &self.descriptor);
        put_u32(&mut out, self.epoch);
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            put_u32(&mut out, t.rank() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic {
                found: [magic[0], magic[1], magic[2], magic[3]],
            });
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let descriptor = r.string("descriptor")?;
        let epoch = r.u32("epoch index")?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let rank = r.u32("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u32("tensor extents")? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed(format!("extents of `{name}` overflow")))?;
            let raw = r.take(len.saturating_mul(4), "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Malformed(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            descriptor,
            epoch,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|source| Error::Checkpoint {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Packs `f64` values losslessly into an `f32` tensor: each value becomes its
/// four 16-bit words, most significant first, stored as small integers.
pub fn pack_f64(values: &[f64]) -> Tensor {
    let data = values
        .iter()
        .flat_map(|v| {
            let b = v.to_bits();
            [48, 32, 16, 0].map(|s| ((b >> s) & 0xffff) as f32)
        })
        .collect();
    Tensor::from_parts_unchecked(vec![values.len().max(1) * 4], if values.is_empty() { vec![0.0; 4] } else { data })
}

/// Inverse of [`pack_f64`]; `len` is the expected value count.
pub fn unpack_f64(t: &Tensor, len: usize) -> std::result::Result<Vec<f64>, CheckpointError> {
    let expected = len.max(1) * 4;
    if t.len() != expected {
        return Err(CheckpointError::Malformed(format!(
            "packed tensor holds {} words, expected {expected}",
            t.len()
        )));
    }
    let mut out = Vec::with_capacity(len);
    for w in t.data().chunks_exact(4).take(len) {
        let mut bits = 0u64;
        for &x in w {
            if !(0.0..65536.0).contains(&x) || x.fract() != 0.0 {
                return Err(CheckpointError::Malformed("packed word out of range".into()));
            }
            bits = (bits << 16) | x as u64;
        }
        out.push(f64::from_bits(bits));
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated { what })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &'static str) -> std::result::Result<String, CheckpointError> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")))
    }
}

/// Metadata stored alongside a model checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub epoch: u32,
}

pub fn encode_checkpoint(spec: &ModelSpec, epoch: u32, params: &ParamSet) -> Vec<u8> {
    Container {
        descriptor: spec.to_string(),
        epoch,
        tensors: params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
    }
    .encode()
}

pub fn save_checkpoint(path: &Path, spec: &ModelSpec, epoch: u32, params: &ParamSet) -> Result<()> {
    std::fs::write(path, encode_checkpoint(spec, epoch, params)).map_err(|e| Error::io(path, e))
}

/// Decodes a checkpoint and validates its tensors against the embedded
/// model descriptor. Nothing is returned unless the whole file is valid.
pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<(ParamSet, CheckpointMeta), CheckpointError> {
    let c = Container::decode(bytes)?;
    let spec: ModelSpec = c
        .descriptor
        .parse()
        .map_err(|e| CheckpointError::Malformed(format!("descriptor: {e}")))?;
    let layout = spec.param_layout();
    if layout.len() != c.tensors.len() {
        return Err(CheckpointError::Malformed(format!(
            "descriptor implies {} tensors, file holds {}",
            layout.len(),
            c.tensors.len()
        )));
    }
    for ((name, shape), (have, t)) in layout.iter().zip(&c.tensors) {
        if name != have {
            return Err(CheckpointError::Malformed(format!("expected tensor `{name}`, found `{have}`")));
        }
        if shape.as_slice() != t.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                found: t.shape().to_vec(),
                expected: shape.clone(),
            });
        }
    }
    let params = ParamSet::new(c.tensors).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    Ok((params, CheckpointMeta { spec, epoch: c.epoch }))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamSet, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, Task};

    fn sample() -> (ModelSpec, ParamSet) {
        let spec = ModelSpec::mlp(3, &[5], 2, Task::Classification).unwrap();
        let params = ParamSet::init(&spec, 11);
        (spec, params)
    }

    #[test]
    fn round_trip_preserves_forward_bitwise() {
        let (spec, params) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt_0001.trck");
        save_checkpoint(&path, &spec, 1, &params).unwrap();
        let (loaded, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.epoch, 1);
        assert_eq!(meta.spec, spec);
        let x = crate::Tensor::vector(vec![0.2, 0.9, 0.4]);
        let a = forward(&spec, &params, &x).unwrap();
        let b = forward(&spec, &loaded, &x).unwrap();
        assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn truncation_detected_at_every_cut() {
        let (spec, params) = sample();
        let bytes = encode_checkpoint(&spec, 3, &params);
        for cut in [0, 3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, CheckpointError::Truncated { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let (spec, params) = sample();
        let mut bytes = encode_checkpoint(&spec, 1, &params);
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::BadMagic { .. })));
        let mut bytes = encode_checkpoint(&spec, 1, &params);
        bytes[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(CheckpointError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn shape_mismatch_detected() {
        let (spec, _) = sample();
        let other = ModelSpec::mlp(3, &[6], 2, Task::Classification).unwrap();
        let bytes = Container {
            descriptor: spec.to_string(),
            epoch: 1,
            tensors: ParamSet::init(&other, 1).into_entries(),
        }
        .encode();
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn packed_f64_is_exact() {
        let v = [0.1, -1e-300, f64::MAX, 0.0, -0.0, 1.0 / 3.0];
        let back = unpack_f64(&pack_f64(&v), v.len()).unwrap();
        assert_eq!(v.map(f64::to_bits).to_vec(), back.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(unpack_f64(&pack_f64(&[]), 0).unwrap().is_empty());
    }

    #[test]
    fn header_layout_is_exact() {
        let c = Container {
            descriptor: "ab".into(),
            epoch: 7,
            tensors: vec![("w".into(), Tensor::vector(vec![1.0]))],
        };
        let b = c.encode();
        let expected: Vec<u8> = [
            &b"TRCK"[..],
            &1u32.to_le_bytes(),
            &2u32.to_le_bytes(),
            b"ab",
            &7u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            b"w",
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &1.0f32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(b, expected);
    }
}
