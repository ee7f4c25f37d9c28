//! Flat binary parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "ADRSIGP1"
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), ndim u32, dims u64 × ndim
//! data       f64 × Σ tensor sizes, tensors in table order, row-major
//! ```

use std::io::{Read, Write};

use super::config::PredictorConfig;
use super::params::PredictorParams;
use super::PredictError;

pub const MAGIC: &[u8; 8] = b"ADRSIGP1";

pub fn write_params<W: Write>(p: &PredictorParams, mut w: W) -> Result<(), PredictError> {
    let tensors = p.tensors();
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for (_, t) in &tensors {
        for v in t.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, PredictError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, PredictError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads parameters for `cfg`; the table must match its layout exactly.
pub fn read_params<R: Read>(
    cfg: &PredictorConfig,
    mut r: R,
) -> Result<PredictorParams, PredictError> {
    let bad = |m: String| PredictError::BadFormat(m);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let count = read_u32(&mut r)? as usize;
    let mut table = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 256 {
            return Err(bad(format!("tensor name of {len} bytes")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 2 {
            return Err(bad(format!("{name}: {ndim} dimensions")));
        }
        let dims = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        table.push((name, dims));
    }
    let n_features = match table.first() {
        Some((name, dims)) if name == "embed.w" && dims.len() == 2 => dims[0],
        _ => return Err(bad("first tensor must be embed.w".into())),
    };
    let mut p = PredictorParams::zeros(cfg, n_features);
    let expected: Vec<(String, Vec<usize>)> = p
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected != table {
        return Err(bad("tensor table does not match the configuration".into()));
    }
    let mut buf = [0u8; 8];
    for (_, mut t) in p.tensors_mut() {
        for v in t.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes".into()));
    }
    Ok(p)
}
