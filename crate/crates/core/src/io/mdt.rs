use std::fs;
use std::path::Path;

use super::{ByteReader, ByteWriter, FormatError};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::{ComplexDenseTensor, DenseTensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"MDT1";
pub const COMPLEX_MAGIC: &[u8; 4] = b"MDTC";

fn write_header(w: &mut ByteWriter, magic: &[u8; 4], dtype: Dtype, dims: &[usize]) {
    w.bytes(magic).u8(dtype as u8).u8(dims.len() as u8);
    for &d in dims {
        w.u64(d as u64);
    }
}

fn write_payload<T: Scalar>(w: &mut ByteWriter, data: &[T]) {
    let buf = w.buf_mut();
    buf.reserve(data.len() * T::DTYPE.size());
    for &v in data {
        v.write_le(buf);
    }
}

fn read_header(r: &mut ByteReader<'_>, magic: &[u8; 4]) -> Result<(Dtype, Vec<usize>, usize), FormatError> {
    r.magic(magic)?;
    let tag = r.u8()?;
    let dtype = Dtype::from_tag(tag).ok_or(FormatError::UnknownDtype(tag))?;
    let ndim = r.u8()? as usize;
    if ndim == 0 {
        return Err(FormatError::Invalid("tensor with zero dimensions".into()));
    }
    let mut raw = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        raw.push(r.u64()?);
    }
    let mut count: u64 = 1;
    for &d in &raw {
        if d == 0 {
            return Err(FormatError::Invalid(format!("zero-sized dimension in {raw:?}")));
        }
        count = count.checked_mul(d).ok_or_else(|| FormatError::DimOverflow(raw.clone()))?;
    }
    let bytes = count
        .checked_mul(dtype.size() as u64)
        .and_then(|b| usize::try_from(b).ok())
        .ok_or_else(|| FormatError::DimOverflow(raw.clone()))?;
    let dims = raw.iter().map(|&d| d as usize).collect();
    Ok((dtype, dims, bytes / dtype.size()))
}

fn read_payload<T: Scalar>(r: &mut ByteReader<'_>, dtype: Dtype, count: usize) -> Result<Vec<T>, FormatError> {
    let raw = r.take(count * dtype.size())?;
    Ok(match dtype {
        Dtype::F64 => raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect(),
        Dtype::F32 => {
            raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect()
        }
    })
}

pub fn encode_tensor<T: Scalar>(t: &DenseTensor<T>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_header(&mut w, TENSOR_MAGIC, T::DTYPE, t.dims());
    write_payload(&mut w, t.data());
    w.into_inner()
}

/// Decodes an MDT buffer into any scalar type; stored data is widened or
/// narrowed through `f64`.
pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<DenseTensor<T>, FormatError> {
    let mut r = ByteReader::new(bytes);
    let t = read_tensor_block(&mut r)?;
    r.finish()?;
    Ok(t)
}

pub(crate) fn read_tensor_block<T: Scalar>(r: &mut ByteReader<'_>) -> Result<DenseTensor<T>, FormatError> {
    let (dtype, dims, count) = read_header(r, TENSOR_MAGIC)?;
    let data = read_payload(r, dtype, count)?;
    Ok(DenseTensor::new(dims, data)?)
}

pub fn encode_complex<T: Scalar>(t: &ComplexDenseTensor<T>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_complex_block(&mut w, t);
    w.into_inner()
}

pub(crate) fn write_complex_block<T: Scalar>(w: &mut ByteWriter, t: &ComplexDenseTensor<T>) {
    write_header(w, COMPLEX_MAGIC, T::DTYPE, t.dims());
    write_payload(w, t.re());
    write_payload(w, t.im());
}

pub(crate) fn read_complex_block<T: Scalar>(r: &mut ByteReader<'_>) -> Result<ComplexDenseTensor<T>, FormatError> {
    let (dtype, dims, count) = read_header(r, COMPLEX_MAGIC)?;
    let re = read_payload(r, dtype, count)?;
    let im = read_payload(r, dtype, count)?;
    Ok(ComplexDenseTensor::new(dims, re, im)?)
}

pub fn decode_complex<T: Scalar>(bytes: &[u8]) -> Result<ComplexDenseTensor<T>, FormatError> {
    let mut r = ByteReader::new(bytes);
    let t = read_complex_block(&mut r)?;
    r.finish()?;
    Ok(t)
}

pub fn write_tensor_file<T: Scalar>(path: impl AsRef<Path>, t: &DenseTensor<T>) -> Result<(), FormatError> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

/// Reads an MDT file as `f64`, widening `f32` payloads.
pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<DenseTensor<f64>, FormatError> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_complex_file<T: Scalar>(path: impl AsRef<Path>, t: &ComplexDenseTensor<T>) -> Result<(), FormatError> {
    fs::write(path, encode_complex(t))?;
    Ok(())
}

pub fn read_complex_file(path: impl AsRef<Path>) -> Result<ComplexDenseTensor<f64>, FormatError> {
    decode_complex(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_tensor(&DenseTensor::<f64>::zeros(vec![2]).unwrap());
        bytes[3] = b'X';
        assert!(matches!(decode_tensor::<f64>(&bytes), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload() {
        let mut w = ByteWriter::new();
        write_header(&mut w, TENSOR_MAGIC, Dtype::F64, &[2, 2]);
        for v in [1.0, 2.0, 3.0] {
            w.f64(v);
        }
        assert!(matches!(decode_tensor::<f64>(&w.into_inner()), Err(FormatError::Truncated { .. })));
    }

    #[test]
    fn dim_overflow() {
        let mut w = ByteWriter::new();
        write_header(&mut w, TENSOR_MAGIC, Dtype::F64, &[usize::MAX, 4]);
        assert!(matches!(decode_tensor::<f64>(&w.into_inner()), Err(FormatError::DimOverflow(_))));
    }

    #[test]
    fn f32_payload_widens() {
        let t = DenseTensor::<f32>::new(vec![3], vec![0.1, -2.5, 7.0]).unwrap();
        let back: DenseTensor<f64> = decode_tensor(&encode_tensor(&t)).unwrap();
        assert_eq!(back.data(), &[0.1f32 as f64, -2.5, 7.0]);
        assert_eq!(encode_tensor(&t)[4], 0);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.mdt");
        let t = DenseTensor::from_fn(vec![2, 3, 4], |i| (i as f64).sin()).unwrap();
        write_tensor_file(&p, &t).unwrap();
        assert_eq!(read_tensor_file(&p).unwrap(), t);
        let c = ComplexDenseTensor::new(vec![2], vec![1.0, 2.0], vec![-1.0, 0.5]).unwrap();
        let pc = dir.path().join("c.mdt");
        write_complex_file(&pc, &c).unwrap();
        assert_eq!(read_complex_file(&pc).unwrap(), c);
    }

    proptest! {
        #[test]
        fn write_then_read_is_bitwise_identity(
            dims in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| f64::from_bits(seed.rotate_left(i as u32) ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
                .collect();
            let t = DenseTensor::new(dims, data).unwrap();
            let back: DenseTensor<f64> = decode_tensor(&encode_tensor(&t)).unwrap();
            let a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.dims(), t.dims());
        }

        #[test]
        fn read_then_write_is_identity_on_valid_files(
            dims in prop::collection::vec(1usize..4, 1..4),
            f32_payload in any::<bool>(),
        ) {
            let n: usize = dims.iter().product();
            let bytes = if f32_payload {
                encode_tensor(&DenseTensor::<f32>::from_fn(dims, |i| i as f32 * 0.25 - 1.0).unwrap())
            } else {
                encode_tensor(&DenseTensor::<f64>::from_fn(dims, |i| (i as f64).cos()).unwrap())
            };
            prop_assert!(n > 0);
            let again = if f32_payload {
                encode_tensor(&decode_tensor::<f32>(&bytes).unwrap())
            } else {
                encode_tensor(&decode_tensor::<f64>(&bytes).unwrap())
            };
            prop_assert_eq!(again, bytes);
        }
    }
}
