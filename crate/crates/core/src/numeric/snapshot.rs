//! Binary tensor snapshots.
//!
//! Layout, all little-endian: magic `SLNK`, `u8` dtype tag, `u8` rank,
//! `rank × u64` dims, then raw scalars (`f64`, or interleaved `f64` re/im
//! pairs for complex tensors). A checkpoint is a plain concatenation of
//! snapshots.

use std::io::{Read, Write};

use num_complex::Complex64;

use super::tensor::{ComplexTensor, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SLNK";
pub const DTYPE_F64: u8 = 0;
pub const DTYPE_C64: u8 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::io("<snapshot stream>", e)
}

fn write_header(w: &mut impl Write, dtype: u8, shape: &[usize]) -> Result<()> {
    let rank = u8::try_from(shape.len()).map_err(|_| Error::Dimension(format!("rank {} exceeds 255", shape.len())))?;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&[dtype, rank]).map_err(io_err)?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(u8, Vec<usize>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Numeric(format!("bad snapshot magic {magic:?}")));
    }
    let mut tag = [0u8; 2];
    r.read_exact(&mut tag).map_err(io_err)?;
    let mut shape = Vec::with_capacity(tag[1] as usize);
    for _ in 0..tag[1] {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(io_err)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    Ok((tag[0], shape))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    write_header(w, DTYPE_F64, t.shape())?;
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let (dtype, shape) = read_header(r)?;
    if dtype != DTYPE_F64 {
        return Err(Error::Numeric(format!("expected real snapshot, dtype tag {dtype}")));
    }
    let n = shape.iter().product();
    Tensor::new(shape, read_f64s(r, n)?)
}

pub fn write_complex(w: &mut impl Write, t: &ComplexTensor) -> Result<()> {
    write_header(w, DTYPE_C64, t.shape())?;
    let mut buf = Vec::with_capacity(t.len() * 16);
    for z in t.data() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

pub fn read_complex(r: &mut impl Read) -> Result<ComplexTensor> {
    let (dtype, shape) = read_header(r)?;
    if dtype != DTYPE_C64 {
        return Err(Error::Numeric(format!("expected complex snapshot, dtype tag {dtype}")));
    }
    let n: usize = shape.iter().product();
    let raw = read_f64s(r, 2 * n)?;
    let data = raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
    ComplexTensor::new(shape, data)
}
