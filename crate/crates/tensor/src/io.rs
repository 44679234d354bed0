//! Tensor serialization.
//!
//! Format: little-endian, magic `"PDAT"`, `u32` rank, `u32` extent per
//! dimension, then the row-major `f64` payload.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::Tensor;

const MAGIC: &[u8; 4] = b"PDAT";
const MAX_RANK: u32 = 8;

#[derive(Debug)]
pub enum TensorIoError {
    Io(std::io::Error),
    BadMagic([u8; 4]),
    UnsupportedRank(u32),
    /// Payload shorter than the header promised.
    Truncated { expected_bytes: usize, actual_bytes: usize },
    Overflow,
}

impl fmt::Display for TensorIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "tensor io: {e}"),
            Self::BadMagic(m) => write!(f, "bad tensor magic {m:?}, expected \"PDAT\""),
            Self::UnsupportedRank(r) => write!(f, "unsupported tensor rank {r}"),
            Self::Truncated {
                expected_bytes,
                actual_bytes,
            } => write!(
                f,
                "truncated tensor payload: expected {expected_bytes} bytes, got {actual_bytes}"
            ),
            Self::Overflow => write!(f, "tensor extents overflow"),
        }
    }
}

impl std::error::Error for TensorIoError {}

impl From<std::io::Error> for TensorIoError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<(), TensorIoError> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, TensorIoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorIoError::BadMagic(magic));
    }
    let rank = read_u32(r)?;
    if rank > MAX_RANK {
        return Err(TensorIoError::UnsupportedRank(rank));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel = 1usize;
    for _ in 0..rank {
        let e = read_u32(r)? as usize;
        numel = numel.checked_mul(e).ok_or(TensorIoError::Overflow)?;
        shape.push(e);
    }
    let expected_bytes = numel.checked_mul(8).ok_or(TensorIoError::Overflow)?;
    let mut payload = vec![0u8; expected_bytes];
    let mut read = 0usize;
    while read < expected_bytes {
        match r.read(&mut payload[read..])? {
            0 => {
                return Err(TensorIoError::Truncated {
                    expected_bytes,
                    actual_bytes: read,
                })
            }
            n => read += n,
        }
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(shape, data).expect("consistent header"))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorIoError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save_tensor<P: AsRef<Path>>(path: P, t: &Tensor) -> Result<(), TensorIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor<P: AsRef<Path>>(path: P) -> Result<Tensor, TensorIoError> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}
