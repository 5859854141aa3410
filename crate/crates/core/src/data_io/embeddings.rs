//! Binary embedding file.
//!
//! Layout: 7-byte ASCII magic `FUSEMB1`, one reserved zero byte, then
//! little-endian `u32` row count N and `u32` dimension D, then N·D
//! little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use super::EmbeddingSet;
use crate::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 7] = b"FUSEMB1";
const HEADER_LEN: usize = 16;

/// Writes `embeddings` to `path`. Non-finite values cannot reach this point:
/// [`EmbeddingSet::new`] rejects them at construction.
pub fn store_embeddings(embeddings: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rows = u32::try_from(embeddings.rows()).map_err(|_| Error::Validation("too many rows".into()))?;
    let dim = u32::try_from(embeddings.dim()).map_err(|_| Error::Validation("dimension too large".into()))?;

    let mut bytes = Vec::with_capacity(HEADER_LEN + embeddings.as_slice().len() * 4);
    bytes.extend_from_slice(EMBEDDING_MAGIC);
    bytes.push(0);
    bytes.extend_from_slice(&rows.to_le_bytes());
    bytes.extend_from_slice(&dim.to_le_bytes());
    for v in embeddings.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < EMBEDDING_MAGIC.len() || &bytes[..7] != EMBEDDING_MAGIC {
        return Err(Error::Format(format!("{} does not start with FUSEMB1", path.display())));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corruption(format!(
            "{}: header truncated at {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if rows == 0 || dim == 0 {
        return Err(Error::EmptySet(format!("{}: header declares {rows}x{dim}", path.display())));
    }
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Corruption("header size overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Corruption(format!(
            "{}: payload is {} bytes, header implies {expected}",
            path.display(),
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingSet::new(rows, dim, data, path.display().to_string())
}
