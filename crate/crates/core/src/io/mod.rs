//! Binary tensor files, named weight files and 8-bit PNM images.
//!
//! All multi-byte values are little-endian. Readers only consume the bytes a
//! header declares, and a short stream is reported as [`IoError::Truncated`].

mod image;
mod tensor_file;
mod weights;

use std::io::Read;

use thiserror::Error;

pub use image::{read_image, read_image_file};
pub use tensor_file::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, TENSOR_MAGIC};
pub use weights::{
    collect_weights, load_weights_into, read_backbone_file, read_weights, read_weights_file, write_weights,
    write_weights_file, NamedTensor, WeightMap, WEIGHTS_MAGIC,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated {what}: needed {needed} bytes, got {got}")]
    Truncated { what: &'static str, needed: u64, got: u64 },
    #[error("dimensions {dims:?} overflow the addressable size")]
    DimOverflow { dims: Vec<u64> },
    #[error("dimensions {dims:?} contain a zero")]
    ZeroDim { dims: Vec<u64> },
    #[error("tensor {name:?}: shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0:?} is missing from the weight file")]
    MissingTensor(String),
    #[error("weight file has unexpected tensor {0:?}")]
    UnexpectedTensor(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("image: {0}")]
    Image(String),
}

/// Reads exactly `n` bytes without allocating more than the stream delivers.
fn read_bytes(r: &mut impl Read, n: u64, what: &'static str) -> Result<Vec<u8>, IoError> {
    let mut buf = Vec::new();
    r.take(n).read_to_end(&mut buf)?;
    if (buf.len() as u64) < n {
        return Err(IoError::Truncated {
            what,
            needed: n,
            got: buf.len() as u64,
        });
    }
    Ok(buf)
}

fn read_array<const N: usize>(r: &mut impl Read, what: &'static str) -> Result<[u8; N], IoError> {
    let v = read_bytes(r, N as u64, what)?;
    Ok(v.try_into().expect("read_bytes returns exactly N bytes"))
}

fn check_magic(r: &mut impl Read, expected: &[u8; 8]) -> Result<(), IoError> {
    let found = read_array::<8>(r, "magic")?;
    if &found != expected {
        return Err(IoError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(&found).into_owned(),
        });
    }
    Ok(())
}

/// Element count and byte size of `dims`, rejecting zeros and overflow.
fn checked_size(dims: &[u64]) -> Result<(usize, u64), IoError> {
    if dims.iter().any(|&d| d == 0) {
        return Err(IoError::ZeroDim { dims: dims.to_vec() });
    }
    let overflow = || IoError::DimOverflow { dims: dims.to_vec() };
    let numel = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d)).ok_or_else(overflow)?;
    let bytes = numel.checked_mul(4).ok_or_else(overflow)?;
    let numel = usize::try_from(numel).map_err(|_| overflow())?;
    Ok((numel, bytes))
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn encode_f32(values: &[f32], out: &mut Vec<u8>) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
