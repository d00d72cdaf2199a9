//! Binary layout for a single TT tensor.
//!
//! ```text
//! magic      4 bytes  "TTC1"
//! d          u32 LE
//! ranks      (d + 1) x u32 LE
//! modes      d x u32 LE
//! cores      f64 LE, core 1 first, each core row-major [r_{k-1}, n_k, r_k]
//! ```

use std::io::{Read, Write};

use super::TtTensor;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

pub const TT_MAGIC: [u8; 4] = *b"TTC1";

pub(crate) fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

pub(crate) fn write_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_tt(w: &mut impl Write, tt: &TtTensor) -> Result<()> {
    w.write_all(&TT_MAGIC)?;
    write_u32(w, tt.order())?;
    for r in tt.ranks() {
        write_u32(w, r)?;
    }
    for n in tt.mode_sizes() {
        write_u32(w, n)?;
    }
    for core in tt.cores() {
        write_f64s(w, core.data())?;
    }
    Ok(())
}

pub fn read_tt(r: &mut impl Read) -> Result<TtTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != TT_MAGIC {
        return Err(Error::Checkpoint(format!("bad tt magic {magic:?}")));
    }
    let d = read_u32(r)?;
    if d == 0 {
        return Err(Error::Checkpoint("tt order 0".into()));
    }
    let ranks = (0..=d).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    let modes = (0..d).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    let cores = (0..d)
        .map(|k| {
            let shape = vec![ranks[k], modes[k], ranks[k + 1]];
            let n = shape.iter().product();
            DenseTensor::new(shape, read_f64s(r, n)?)
        })
        .collect::<Result<Vec<_>>>()?;
    TtTensor::new(cores)
}
