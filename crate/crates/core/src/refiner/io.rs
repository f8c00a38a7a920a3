//! Binary model files.
//!
//! Layout, little-endian: `ODOF`, u16 version, u8 branch count, then per
//! branch (u8 dof, u8 activation, u8 frozen, 6 × u8 input mask, 6 + 6 f64
//! normalization, f64 target mean, f64 target std, u16 layer count, and per
//! layer u32 inputs, u32 outputs, weights, bias, then 6 f64 skip weights),
//! then u8 fusion flag with 6 × 12 weights and 6 biases when set, then u32
//! metadata length and UTF-8 metadata, and finally a CRC-32 of everything
//! before it.

use std::fs;
use std::path::Path;

use super::activation::Activation;
use super::combined::{CombinedModel, FusionHead, FUSION_INPUTS};
use super::mlp::{Layer, MlpBranch, Normalization, INPUT_DIM};
use super::RefinerError;

pub const MAGIC: &[u8; 4] = b"ODOF";
pub const FORMAT_VERSION: u16 = 1;

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_model(model: &CombinedModel, metadata: &str) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(model.branches.len() as u8);
    for b in &model.branches {
        buf.push(b.dof_index as u8);
        buf.push(b.activation.id());
        buf.push(b.frozen as u8);
        buf.extend(b.input_mask.iter().map(|&m| m as u8));
        b.input_norm.mean.iter().for_each(|&v| put_f64(&mut buf, v));
        b.input_norm.std.iter().for_each(|&v| put_f64(&mut buf, v));
        put_f64(&mut buf, b.target_mean);
        put_f64(&mut buf, b.target_std);
        buf.extend_from_slice(&(b.layers.len() as u16).to_le_bytes());
        for l in &b.layers {
            buf.extend_from_slice(&(l.inputs as u32).to_le_bytes());
            buf.extend_from_slice(&(l.outputs as u32).to_le_bytes());
            l.weights.iter().chain(&l.bias).for_each(|&v| put_f64(&mut buf, v));
        }
        b.skip.iter().for_each(|&v| put_f64(&mut buf, v));
    }
    match &model.fusion {
        Some(head) => {
            buf.push(1);
            head.weights.iter().flatten().chain(&head.bias).for_each(|&v| put_f64(&mut buf, v));
        }
        None => buf.push(0),
    }
    buf.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    buf.extend_from_slice(metadata.as_bytes());
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RefinerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| RefinerError::Corrupt("truncated model file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, RefinerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, RefinerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, RefinerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, RefinerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, RefinerError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Decodes a model file, returning the model and its metadata string.
pub fn decode_model(bytes: &[u8]) -> Result<(CombinedModel, String), RefinerError> {
    let corrupt = |m: &str| RefinerError::Corrupt(m.to_string());
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing ODOF magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(RefinerError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 10 {
        return Err(corrupt("truncated model file"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(corrupt("checksum mismatch"));
    }

    let mut r = Reader { bytes: body, pos: 6 };
    let count = r.u8()? as usize;
    let mut branches = Vec::with_capacity(count);
    for _ in 0..count {
        let dof_index = r.u8()? as usize;
        let activation =
            Activation::from_id(r.u8()?).ok_or_else(|| corrupt("unknown activation id"))?;
        let frozen = r.u8()? != 0;
        let mask = r.take(INPUT_DIM)?;
        let input_mask = std::array::from_fn(|i| mask[i] != 0);
        let mean = r.f64s(INPUT_DIM)?.try_into().expect("six values");
        let std = r.f64s(INPUT_DIM)?.try_into().expect("six values");
        let target_mean = r.f64()?;
        let target_std = r.f64()?;
        let n_layers = r.u16()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        let mut expected_inputs = INPUT_DIM;
        for _ in 0..n_layers {
            let inputs = r.u32()? as usize;
            let outputs = r.u32()? as usize;
            if inputs != expected_inputs || outputs == 0 {
                return Err(corrupt("incompatible layer dimensions"));
            }
            let weights = r.f64s(inputs.checked_mul(outputs).ok_or_else(|| corrupt("layer too large"))?)?;
            let bias = r.f64s(outputs)?;
            layers.push(Layer {
                inputs,
                outputs,
                weights,
                bias,
            });
            expected_inputs = outputs;
        }
        if expected_inputs != 1 {
            return Err(corrupt("branch output is not scalar"));
        }
        let skip = r.f64s(INPUT_DIM)?.try_into().expect("six values");
        branches.push(MlpBranch {
            dof_index,
            activation,
            layers,
            skip,
            input_norm: Normalization { mean, std },
            target_mean,
            target_std,
            input_mask,
            frozen,
        });
    }
    let fusion = match r.u8()? {
        0 => None,
        1 => {
            let w = r.f64s(INPUT_DIM * FUSION_INPUTS)?;
            let b = r.f64s(INPUT_DIM)?;
            Some(FusionHead {
                weights: std::array::from_fn(|i| {
                    std::array::from_fn(|j| w[i * FUSION_INPUTS + j])
                }),
                bias: b.try_into().expect("six values"),
            })
        }
        _ => return Err(corrupt("bad fusion flag")),
    };
    let meta_len = r.u32()? as usize;
    let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
        .map_err(|_| corrupt("metadata is not UTF-8"))?;
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    if branches.len() != INPUT_DIM || branches.iter().enumerate().any(|(i, b)| b.dof_index != i) {
        return Err(corrupt("branches do not cover dof 0..5 in order"));
    }
    Ok((CombinedModel { branches, fusion }, metadata))
}

pub fn save_model(model: &CombinedModel, metadata: &str, path: &Path) -> Result<(), RefinerError> {
    fs::write(path, encode_model(model, metadata)).map_err(|source| RefinerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<(CombinedModel, String), RefinerError> {
    let bytes = fs::read(path).map_err(|source| RefinerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_model(&bytes)
}
