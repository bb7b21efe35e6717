//! Bit-exact binary serialization of named f32 tensors.
//!
//! Layout: magic `LPB1`, tensor count as u32 LE, then per tensor the name
//! length (u32 LE), UTF-8 name bytes, rank (u32 LE), each dim (u32 LE), and
//! the raw f32 LE data row-major. The file ends with a u64 LE footer holding
//! the byte length of everything before it, so truncation is detectable.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LPB1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("failed to access {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic bytes: expected \"LPB1\"")]
    BadMagic,
    #[error("truncated checkpoint: footer records {recorded} content bytes, file has {actual}")]
    Truncated { recorded: u64, actual: u64 },
    #[error("malformed checkpoint: {message}")]
    Malformed { message: String },
    #[error("duplicate tensor name {name:?}")]
    DuplicateName { name: String },
}

/// Serializes tensors in the order given.
pub fn to_bytes(tensors: &[(String, &Tensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &value in tensor.data() {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    let content_len = out.len() as u64;
    out.extend_from_slice(&content_len.to_le_bytes());
    out
}

/// Parses bytes produced by [`to_bytes`], preserving tensor order.
pub fn from_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(CheckpointError::Truncated {
            recorded: 0,
            actual: bytes.len() as u64,
        });
    }
    let (content, footer) = bytes.split_at(bytes.len() - 8);
    let recorded = u64::from_le_bytes(footer.try_into().expect("8 bytes"));
    if recorded != content.len() as u64 {
        return Err(CheckpointError::Truncated {
            recorded,
            actual: content.len() as u64,
        });
    }
    if &content[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut cursor = Cursor {
        data: content,
        pos: 4,
    };
    let count = cursor.read_u32()? as usize;
    let mut tensors: Vec<(String, Tensor<f32>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cursor.read_u32()? as usize;
        let name_bytes = cursor.read_slice(name_len)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Malformed {
                message: "tensor name is not UTF-8".to_string(),
            })?
            .to_string();
        if tensors.iter().any(|(n, _)| n == &name) {
            return Err(CheckpointError::DuplicateName { name });
        }
        let rank = cursor.read_u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.read_u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let raw = cursor.read_slice(4)?;
            data.push(f32::from_le_bytes(raw.try_into().expect("4 bytes")));
        }
        tensors.push((name, Tensor::from_vec(&shape, data)));
    }
    if cursor.pos != content.len() {
        return Err(CheckpointError::Malformed {
            message: format!(
                "{} unread bytes after the last tensor",
                content.len() - cursor.pos
            ),
        });
    }
    Ok(tensors)
}

pub fn save(tensors: &[(String, &Tensor<f32>)], path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(tensors)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn read_slice(&mut self, len: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + len > self.data.len() {
            return Err(CheckpointError::Malformed {
                message: format!(
                    "needed {len} bytes at offset {}, only {} remain",
                    self.pos,
                    self.data.len() - self.pos
                ),
            });
        }
        let slice = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn read_u32(&mut self) -> Result<u32, CheckpointError> {
        let raw = self.read_slice(4)?;
        Ok(u32::from_le_bytes(raw.try_into().expect("4 bytes")))
    }
}
