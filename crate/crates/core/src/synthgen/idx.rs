//! IDX container parsing (the MNIST / EMNIST distribution format).
//!
//! Header: two zero bytes, a type code, the dimension count, then one
//! big-endian `u32` per dimension. Only unsigned-byte payloads are used
//! for glyphs.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IdxError {
    #[error("bad IDX magic at byte offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported IDX element type 0x{code:02x} at byte offset 2 (only unsigned bytes)")]
    UnsupportedType { code: u8 },
    #[error("truncated IDX data at byte offset {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("{extra} trailing bytes after IDX payload at byte offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("expected a {expected}-dimensional IDX array, found {found} dimensions")]
    Rank { expected: usize, found: usize },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} outside [0, {num_classes})")]
    LabelRange {
        index: usize,
        label: i64,
        num_classes: usize,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

const UBYTE: u8 = 0x08;

/// Decoded IDX array of unsigned bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::Truncated {
            offset: 0,
            expected: 4,
            found: bytes.len(),
        });
    }
    if bytes[0] != 0 {
        return Err(IdxError::BadMagic { offset: 0 });
    }
    if bytes[1] != 0 {
        return Err(IdxError::BadMagic { offset: 1 });
    }
    if bytes[2] != UBYTE {
        return Err(IdxError::UnsupportedType { code: bytes[2] });
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(IdxError::Truncated {
            offset: 4,
            expected: 4 * ndim,
            found: bytes.len() - 4,
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims.iter().product::<usize>();
    let found = bytes.len() - header;
    if found < expected {
        return Err(IdxError::Truncated {
            offset: header,
            expected,
            found,
        });
    }
    if found > expected {
        return Err(IdxError::TrailingBytes {
            offset: header + expected,
            extra: found - expected,
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Reads an IDX file, transparently inflating `.gz` archives.
pub fn read_idx_file(path: &Path) -> Result<IdxArray, IdxError> {
    use std::io::Read;
    let io = |e: std::io::Error| IdxError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let raw = std::fs::read(path).map_err(io)?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io)?;
        out
    } else {
        raw
    };
    parse_idx(&bytes)
}

#[cfg(test)]
pub(crate) fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, dims.len() as u8];
    for d in dims {
        out.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}
