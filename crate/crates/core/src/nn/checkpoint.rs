//! Binary model checkpoints.
//!
//! ```text
//! magic      4 bytes   "EMBR"
//! version    u16 LE    1
//! layers     u32 LE
//! per layer:
//!   in       u32 LE
//!   out      u32 LE
//!   act      u8        0 = identity, 1 = tanh
//!   weight   f64 LE × out·in, row-major (out × in)
//!   bias     f64 LE × out
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::format::ByteReader;
use crate::linalg::Matrix;
use crate::nn::mlp::{Activation, Layer, MlpModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMBR";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + model.parameter_count() * 8 + model.layers().len() * 9);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.extend_from_slice(&(layer.input_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.output_dim() as u32).to_le_bytes());
        out.push(layer.activation.id());
        for w in layer.weight.as_slice() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in &layer.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MlpModel> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"EMBR\""));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::format(6, "checkpoint has no layers"));
    }
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let input = r.u32()? as usize;
        let output = r.u32()? as usize;
        let act_offset = r.offset();
        let activation = Activation::from_id(r.u8()?)
            .ok_or_else(|| Error::format(act_offset, "unknown activation id"))?;
        let weight_offset = r.offset();
        let weight = r.f64_vec(input * output)?;
        let bias = r.f64_vec(output)?;
        let weight = Matrix::from_vec(output, input, weight)
            .map_err(|e| Error::format(weight_offset, e.to_string()))?;
        let layer = Layer::new(weight, bias, activation)
            .map_err(|e| Error::format(weight_offset, e.to_string()))?;
        layers.push(layer);
    }
    if !r.is_empty() {
        return Err(Error::format(r.offset(), "trailing bytes after last layer"));
    }
    MlpModel::new(layers).map_err(|e| Error::format(10, e.to_string()))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &MlpModel) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel> {
    decode_checkpoint(&std::fs::read(path)?)
}
