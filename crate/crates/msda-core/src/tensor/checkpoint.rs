//! Versioned named-tensor checkpoint files (magic "MSDA0001").
//!
//! Layout: magic (8 bytes) | version u32 | count u32 | per tensor:
//! name_len u16, name (UTF-8), ndim u8, dims u32×ndim, data f64 LE.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// File magic for checkpoints.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSDA0001";
/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Write named tensors in order.
pub fn save_checkpoint(path: &Path, items: &[(String, &Tensor)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(items.len() as u32).to_le_bytes())?;
    for (name, tensor) in items {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument {
                what: "tensor name",
                msg: format!("name too long ({} bytes)", name_bytes.len()),
            });
        }
        out.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        out.write_all(name_bytes)?;
        let shape = tensor.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::InvalidArgument {
                what: "tensor rank",
                msg: format!("rank {} unsupported", shape.len()),
            });
        }
        out.write_all(&[shape.len() as u8])?;
        for &d in shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(tensor.numel() * 8);
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

/// Read all named tensors, in file order.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            what: "checkpoint",
            msg: format!("bad magic {magic:?}"),
        });
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            what: "checkpoint",
            msg: format!("unsupported version {version}"),
        });
    }
    input.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4);
    let mut items = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        input.read_exact(&mut b2)?;
        let name_len = u16::from_le_bytes(b2) as usize;
        let mut name_bytes = vec![0u8; name_len];
        input.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|e| Error::Format {
            what: "checkpoint",
            msg: format!("invalid tensor name: {e}"),
        })?;
        let mut b1 = [0u8; 1];
        input.read_exact(&mut b1)?;
        let ndim = b1[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            input.read_exact(&mut b4)?;
            shape.push(u32::from_le_bytes(b4) as usize);
        }
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        input.read_exact(&mut buf)?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        items.push((name, Tensor::from_vec(&shape, data)?));
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format {
            what: "checkpoint",
            msg: "trailing bytes".to_string(),
        });
    }
    Ok(items)
}
