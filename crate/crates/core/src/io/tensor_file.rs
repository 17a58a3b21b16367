use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{check_magic, checked_size, decode_f32, encode_f32, read_array, read_bytes, IoError};
use crate::tensor::Tensor4;

pub const TENSOR_MAGIC: &[u8; 8] = b"LSKT0001";

/// `LSKT0001`, four `u64` dims `(n, c, h, w)`, then the `f32` payload.
pub fn read_tensor(r: &mut impl Read) -> Result<Tensor4<f32>, IoError> {
    check_magic(r, TENSOR_MAGIC)?;
    let mut dims = [0u64; 4];
    for d in &mut dims {
        *d = u64::from_le_bytes(read_array::<8>(r, "tensor header")?);
    }
    let (_, bytes) = checked_size(&dims)?;
    let payload = read_bytes(r, bytes, "tensor payload")?;
    let shape = [dims[0] as usize, dims[1] as usize, dims[2] as usize, dims[3] as usize];
    Ok(Tensor4::new(shape, decode_f32(&payload)).expect("length checked above"))
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor4<f32>) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(40 + t.numel() * 4);
    buf.extend_from_slice(TENSOR_MAGIC);
    for d in t.shape().dims() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    encode_f32(t.data(), &mut buf);
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor4<f32>, IoError> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

pub fn write_tensor_file(path: impl AsRef<Path>, t: &Tensor4<f32>) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes_of(t: &Tensor4<f32>) -> Vec<u8> {
        let mut v = Vec::new();
        write_tensor(&mut v, t).unwrap();
        v
    }

    #[test]
    fn layout() {
        let t = Tensor4::new([1, 1, 1, 2], vec![1.0, -2.5]).unwrap();
        let b = bytes_of(&t);
        assert_eq!(&b[..8], b"LSKT0001");
        assert_eq!(&b[8..16], &1u64.to_le_bytes());
        assert_eq!(&b[32..40], &2u64.to_le_bytes());
        assert_eq!(&b[40..44], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 48);
        assert_eq!(read_tensor(&mut &b[..]).unwrap(), t);
    }

    #[test]
    fn distinct_errors() {
        let t = Tensor4::new([1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let b = bytes_of(&t);
        assert!(matches!(read_tensor(&mut &b[..47]), Err(IoError::Truncated { .. })));
        assert!(matches!(read_tensor(&mut &b[..20]), Err(IoError::Truncated { .. })));

        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut &bad[..]), Err(IoError::BadMagic { .. })));

        let mut huge = b[..8].to_vec();
        for _ in 0..4 {
            huge.extend_from_slice(&u64::MAX.to_le_bytes());
        }
        assert!(matches!(read_tensor(&mut &huge[..]), Err(IoError::DimOverflow { .. })));

        let mut zero = b.clone();
        zero[8..16].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(read_tensor(&mut &zero[..]), Err(IoError::ZeroDim { .. })));
    }
}
