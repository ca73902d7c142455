//! Binary embedding file format.
//!
//! ```text
//! offset 0   : b"EMB1"
//! offset 4   : u32 LE row count
//! offset 8   : u32 LE dim
//! offset 12  : rows*dim f32 LE, row-major
//! offset end : u8 flags (bit 0 = rows are unit-normalized)
//! ```

use std::fs;
use std::path::Path;

use crate::embed::{l2_norm, EmbeddingMatrix, NORM_TOLERANCE};
use crate::error::{Error, FormatError, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;
const FLAG_NORMALIZED: u8 = 0b1;

/// Encodes `m`, rounding values to `f32`.
pub fn to_bytes(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows())
        .map_err(|_| Error::InvalidArgument(format!("{} rows exceed u32", m.rows())))?;
    let dim = u32::try_from(m.dim())
        .map_err(|_| Error::InvalidArgument(format!("dim {} exceeds u32", m.dim())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + m.data().len() * 4 + 1);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for (i, &v) in m.data().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "value {v} at flat index {i} is not representable as f32"
            )));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    out.push(if m.is_normalized() {
        FLAG_NORMALIZED
    } else {
        0
    });
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<EmbeddingMatrix, FormatError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic {
            offset: 0,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::TruncatedHeader {
            offset: bytes.len(),
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if rows == 0 || dim == 0 {
        return Err(FormatError::EmptyShape {
            offset: 4,
            rows,
            dim,
        });
    }
    let count = rows as usize * dim as usize;
    let expected = HEADER_LEN + count * 4 + 1;
    if bytes.len() < expected {
        return Err(FormatError::TruncatedPayload {
            offset: bytes.len(),
            rows,
            dim,
            expected,
            available: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            offset: expected,
            rows,
            dim,
            extra: bytes.len() - expected,
        });
    }
    let mut data = Vec::with_capacity(count);
    for (k, chunk) in bytes[HEADER_LEN..expected - 1].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                offset: HEADER_LEN + 4 * k,
            });
        }
        data.push(v as f64);
    }
    let flags = bytes[expected - 1];
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(FormatError::UnknownFlags {
            offset: expected - 1,
            flags,
        });
    }
    let normalized = flags & FLAG_NORMALIZED != 0;
    if normalized {
        for (row, chunk) in data.chunks_exact(dim as usize).enumerate() {
            let norm = l2_norm(chunk);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(FormatError::NotNormalized { row, norm });
            }
        }
    }
    let m = EmbeddingMatrix::new(rows as usize, dim as usize, data)
        .expect("shape and finiteness checked above");
    Ok(m.with_normalized_flag(normalized)
        .expect("norms checked above"))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    from_bytes(&bytes).map_err(|e| Error::from(e).at_path(path))
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(m)?;
    fs::write(path, bytes).map_err(|e| Error::from(e).at_path(path))
}
