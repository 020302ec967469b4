//! Binary model checkpoints.
//!
//! Layout: magic `FFML`, format version (u32 LE), then for every named tensor
//! until end of file: name length (u32), UTF-8 name, rank (u32), dims (u32
//! each), raw little-endian f32 values. EMA shadows carry a `.ema` suffix.

use crate::error::{GradError, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"FFML";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(model: &Model<T>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in model.named_tensors() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn save<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let end = *pos + 4;
    let chunk = bytes
        .get(*pos..end)
        .ok_or_else(|| GradError::Checkpoint(format!("truncated at byte {}", *pos)))?;
    *pos = end;
    Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
}

/// Parses every named tensor in a checkpoint stream.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(GradError::Checkpoint("missing FFML magic".into()));
    }
    let mut pos = 4;
    let version = read_u32(&bytes, &mut pos)?;
    if version != VERSION {
        return Err(GradError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while pos < bytes.len() {
        let len = read_u32(&bytes, &mut pos)? as usize;
        let name = bytes
            .get(pos..pos + len)
            .ok_or_else(|| GradError::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name.to_vec()).map_err(|e| GradError::Checkpoint(e.to_string()))?;
        pos += len;
        let rank = read_u32(&bytes, &mut pos)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&bytes, &mut pos)? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = bytes
            .get(pos..pos + 4 * n)
            .ok_or_else(|| GradError::Checkpoint(format!("truncated data for `{name}`")))?;
        pos += 4 * n;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_vec(&dims, data)?));
    }
    Ok(out)
}

/// Overwrites `model`'s tensors from a checkpoint with the same names and shapes.
pub fn load_into<T: Scalar>(model: &mut Model<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::open(path)?;
    let entries = read_checkpoint(std::io::BufReader::new(file))?;
    let mut targets = model.named_tensors_mut();
    if entries.len() != targets.len() {
        return Err(GradError::Checkpoint(format!(
            "checkpoint holds {} tensors, model has {}",
            entries.len(),
            targets.len()
        )));
    }
    for ((name, src), (want, dst)) in entries.into_iter().zip(targets.iter_mut()) {
        if &name != want || src.shape() != dst.shape() {
            return Err(GradError::Checkpoint(format!("entry `{name}` does not match `{want}`")));
        }
        for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
            *d = T::from_f64(*s as f64);
        }
    }
    Ok(())
}
