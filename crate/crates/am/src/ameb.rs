//! The AMEB embedding container.
//!
//! ```text
//! 0..4    b"AMEB"
//! 4..8    u32 version (1)
//! 8..12   u32 d
//! 12..20  u64 n
//! 20..24  u32 num_classes
//! then n records of { u32 label, d × f32 }
//! ```
//!
//! Everything is little-endian with no padding and no footer. Vectors are
//! widened to `f64` on load; since every `f32` is exactly representable the
//! round trip through [`EmbeddingSet`] is byte-exact.

use std::fs;
use std::path::Path;

use am_core::embed::EmbeddingSet;
use am_core::Matrix;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"AMEB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum AmebError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"AMEB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}, expected {VERSION}")]
    Version(u32),
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{extra} trailing bytes after the last record")]
    TrailingBytes { extra: u64 },
    #[error("empty set: d = {dim}, n = {len}, classes = {classes}")]
    Empty { dim: u32, len: u64, classes: u32 },
    #[error("record {record} holds a non-finite value")]
    NonFinite { record: u64 },
    #[error("record {record} has label {label}, but only {num_classes} classes are declared")]
    LabelOutOfRange { record: u64, label: u32, num_classes: u32 },
    #[error("f64 value {value} in record {record} does not survive narrowing to f32")]
    NotSinglePrecision { record: u64, value: f64 },
    #[error(transparent)]
    Invalid(#[from] am_core::Error),
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses a complete AMEB image.
pub fn decode(bytes: &[u8]) -> Result<EmbeddingSet, AmebError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(AmebError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(AmebError::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(AmebError::BadMagic(magic));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(AmebError::Version(version));
    }
    let dim = u32_at(bytes, 8);
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let classes = u32_at(bytes, 20);
    if dim == 0 || len == 0 || classes == 0 {
        return Err(AmebError::Empty { dim, len, classes });
    }

    let record_len = 4 + 4 * dim as u64;
    let expected = len
        .checked_mul(record_len)
        .and_then(|b| b.checked_add(HEADER_LEN as u64))
        .unwrap_or(u64::MAX);
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(AmebError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(AmebError::TrailingBytes {
            extra: actual - expected,
        });
    }

    let d = dim as usize;
    let mut data = Vec::with_capacity(d * len as usize);
    let mut labels = Vec::with_capacity(len as usize);
    for (record, chunk) in bytes[HEADER_LEN..].chunks_exact(record_len as usize).enumerate() {
        let record = record as u64;
        let label = u32_at(chunk, 0);
        if label >= classes {
            return Err(AmebError::LabelOutOfRange {
                record,
                label,
                num_classes: classes,
            });
        }
        for value in chunk[4..].chunks_exact(4) {
            let x = f32::from_le_bytes(value.try_into().unwrap());
            if !x.is_finite() {
                return Err(AmebError::NonFinite { record });
            }
            data.push(f64::from(x));
        }
        labels.push(label as usize);
    }
    let vectors = Matrix::from_col_major(d, len as usize, data)?;
    Ok(EmbeddingSet::new(vectors, labels, classes as usize)?)
}

/// Serializes a set. Fails if a coordinate is not exactly an `f32`, since
/// silently rounding would break the round trip.
pub fn encode(set: &EmbeddingSet) -> Result<Vec<u8>, AmebError> {
    let d = set.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + set.len() * (4 + 4 * d));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    out.extend_from_slice(&(set.num_classes() as u32).to_le_bytes());
    for (record, &label) in set.labels().iter().enumerate() {
        out.extend_from_slice(&(label as u32).to_le_bytes());
        for &value in set.vectors().col(record) {
            let narrow = value as f32;
            if f64::from(narrow) != value {
                return Err(AmebError::NotSinglePrecision {
                    record: record as u64,
                    value,
                });
            }
            out.extend_from_slice(&narrow.to_le_bytes());
        }
    }
    Ok(out)
}

/// Rounds every coordinate to the nearest `f32` so the set can be saved.
pub fn to_single_precision(set: &EmbeddingSet) -> EmbeddingSet {
    let data: Vec<f64> = set.vectors().as_slice().iter().map(|&v| f64::from(v as f32)).collect();
    let vectors = Matrix::from_col_major(set.dim(), set.len(), data).expect("shape is unchanged");
    let mut out = EmbeddingSet::new(vectors, set.labels().to_vec(), set.num_classes())
        .expect("rounding a finite f64 into f32 range keeps it finite");
    out.class_names = set.class_names.clone();
    out
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet, AmebError> {
    decode(&fs::read(path)?)
}

pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<(), AmebError> {
    fs::write(path, encode(set)?)?;
    Ok(())
}
