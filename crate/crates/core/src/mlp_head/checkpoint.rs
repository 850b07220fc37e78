//! `MEMH` checkpoint: magic, version u16, input_dim u32, label_count u32,
//! then w1, b1, w2, b2, w3, b3, wp, bp as row-major f32 LE, then a CRC32
//! of all preceding bytes. All integers little-endian.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{layer_dims, Layer, MlpHead, HIDDEN_DIMS};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MEMH";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

pub fn encode_checkpoint(head: &MlpHead<f32>) -> Result<Vec<u8>> {
    if head.hidden_dims() != HIDDEN_DIMS {
        return Err(Error::Argument(format!(
            "only the standard {HIDDEN_DIMS:?} stack can be checkpointed, got {:?}",
            head.hidden_dims()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + head.param_count() * 4 + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(head.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(head.label_count() as u32).to_le_bytes());
    for layer in head.layers() {
        for v in layer.w.iter().chain(layer.b.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MlpHead<f32>> {
    if bytes.len() < HEADER_LEN + 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing MEMH magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let input_dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let label_count = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if input_dim == 0 || label_count == 0 {
        return Err(Error::Format("checkpoint dims must be positive".into()));
    }
    let dims = layer_dims(input_dim, HIDDEN_DIMS, label_count);
    let params: usize = dims.iter().map(|(i, o)| i * o + o).sum();
    let expected = HEADER_LEN + params * 4 + 4;
    if bytes.len() != expected {
        return Err(Error::Corruption(format!(
            "checkpoint is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Corruption("checkpoint checksum mismatch".into()));
    }
    let mut floats = body[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<f32> { floats.by_ref().take(n).collect() };
    let layers = dims.map(|(i, o)| Layer {
        w: Array2::from_shape_vec((i, o), take(i * o)).expect("sized above"),
        b: Array1::from_vec(take(o)),
    });
    MlpHead::from_layers(layers).map_err(|e| Error::Corruption(e.to_string()))
}

/// Writes the checkpoint and returns its CRC32 trailer.
pub fn save_checkpoint(path: &Path, head: &MlpHead<f32>) -> Result<u32> {
    let bytes = encode_checkpoint(head)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()))
}

pub fn load_checkpoint(path: &Path) -> Result<MlpHead<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
