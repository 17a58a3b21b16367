//! Binary PGM (`P5`) and PPM (`P6`) with at most 8 bits per sample.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use super::{read_bytes, IoError};
use crate::tensor::Tensor4;

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: u32,
}

fn next_byte(r: &mut impl Read) -> Result<Option<u8>, IoError> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(None),
        _ => Ok(Some(b[0])),
    }
}

/// Next whitespace-delimited header token, skipping `#` comments. Consumes
/// exactly one whitespace byte after the token.
fn token(r: &mut impl Read) -> Result<String, IoError> {
    let mut tok = String::new();
    loop {
        let Some(b) = next_byte(r)? else {
            return Err(IoError::Truncated {
                what: "image header",
                needed: 1,
                got: 0,
            });
        };
        if b == b'#' && tok.is_empty() {
            while let Some(c) = next_byte(r)? {
                if c == b'\n' || c == b'\r' {
                    break;
                }
            }
            continue;
        }
        if b.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        if tok.len() > 16 {
            return Err(IoError::Image("header token too long".into()));
        }
        tok.push(b as char);
    }
}

fn header(r: &mut impl Read) -> Result<Header, IoError> {
    let magic = token(r)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(IoError::BadMagic {
                expected: "P5 or P6".into(),
                found: other.into(),
            })
        }
    };
    let mut num = |what: &str| -> Result<u32, IoError> {
        let t = token(r)?;
        t.parse().map_err(|_| IoError::Image(format!("bad {what} {t:?}")))
    };
    let width = num("width")? as usize;
    let height = num("height")? as usize;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 {
        return Err(IoError::ZeroDim {
            dims: vec![1, channels as u64, height as u64, width as u64],
        });
    }
    if maxval == 0 || maxval > 255 {
        return Err(IoError::Image(format!("maxval {maxval} unsupported; only 8-bit images are read")));
    }
    Ok(Header {
        channels,
        width,
        height,
        maxval,
    })
}

/// Pixels scaled by `1/maxval` into a `(1, 3, h, w)` tensor; grayscale is
/// replicated across the three channels.
pub fn read_image(r: &mut impl Read) -> Result<Tensor4<f32>, IoError> {
    let h = header(r)?;
    let plane = h.width.checked_mul(h.height).ok_or(IoError::DimOverflow {
        dims: vec![h.height as u64, h.width as u64],
    })?;
    let bytes = read_bytes(r, (plane as u64).saturating_mul(h.channels as u64), "image pixels")?;
    let maxval = h.maxval as f32;
    let mut data = vec![0f32; 3 * plane];
    for c in 0..3 {
        let src = if h.channels == 1 { 0 } else { c };
        for i in 0..plane {
            data[c * plane + i] = bytes[i * h.channels + src] as f32 / maxval;
        }
    }
    Ok(Tensor4::new([1, 3, h.height, h.width], data).expect("sized above"))
}

pub fn read_image_file(path: impl AsRef<Path>) -> Result<Tensor4<f32>, IoError> {
    read_image(&mut BufReader::new(File::open(path)?))
}
