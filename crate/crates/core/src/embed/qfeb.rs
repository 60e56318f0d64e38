//! QFEB: a little-endian container for an embedding matrix.
//!
//! ```text
//! offset size field
//!      0    4 magic "QFEB"
//!      4    2 version (u16) = 1
//!      6    4 count (u32)
//!     10    4 dim (u32)
//!     14    2 flags (u16), bit 0 = rows already unit-norm
//!     16   16 reserved, zero
//!     32  4*count*dim  row-major f32 payload
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use super::EmbedError;
use crate::cqr::EmbeddingMatrix;

pub const MAGIC: [u8; 4] = *b"QFEB";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const FLAG_NORMALIZED: u16 = 1;

/// Serialize `matrix` with the normalized flag set.
pub fn write_embedding_matrix<W: Write>(matrix: &EmbeddingMatrix, mut out: W) -> io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[6..10].copy_from_slice(&(matrix.rows() as u32).to_le_bytes());
    header[10..14].copy_from_slice(&(matrix.dim() as u32).to_le_bytes());
    header[14..16].copy_from_slice(&FLAG_NORMALIZED.to_le_bytes());
    out.write_all(&header)?;
    let mut payload = Vec::with_capacity(matrix.as_flat().len() * 4);
    for x in matrix.as_flat() {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&payload)?;
    out.flush()
}

/// Parse a complete QFEB image.
pub fn read_embedding_matrix(bytes: &[u8]) -> Result<EmbeddingMatrix, EmbedError> {
    if bytes.len() >= 4 && bytes[0..4] != MAGIC {
        return Err(EmbedError::BadMagic(bytes[0..4].try_into().unwrap()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(EmbedError::TruncatedPayload {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != VERSION {
        return Err(EmbedError::UnsupportedVersion(version));
    }
    let count = u64::from(u32_at(6));
    let dim = u64::from(u32_at(10));
    let flags = u16_at(14);
    let expected = HEADER_LEN as u64 + 4 * count * dim;
    if bytes.len() as u64 != expected {
        return Err(EmbedError::TruncatedPayload {
            expected,
            found: bytes.len() as u64,
        });
    }
    if count > 0 && dim == 0 {
        return Err(EmbedError::DimZero);
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let dim = dim as usize;
    if count == 0 {
        return Ok(EmbeddingMatrix::empty(dim));
    }
    if flags & FLAG_NORMALIZED != 0 {
        EmbeddingMatrix::from_flat(dim, data)
    } else {
        let rows: Vec<&[f32]> = data.chunks_exact(dim).collect();
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite { row: i });
            }
        }
        EmbeddingMatrix::from_rows(&rows)
    }
}

pub fn load_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, EmbedError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_embedding_matrix(&bytes)
}

/// Write `matrix` to `path` via a sibling temp file and rename, so readers
/// never observe a partial file.
pub fn write_embedding_file(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<(), EmbedError> {
    let path = path.as_ref();
    let io_err = |source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = crate::util::temp_sibling(path);
    let result = (|| {
        let file = fs::File::create(&tmp)?;
        write_embedding_matrix(matrix, io::BufWriter::new(file))?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err)
}
