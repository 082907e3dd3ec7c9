//! Flat little-endian parameter format:
//!
//! ```text
//! magic   b"DQMP"
//! version u32
//! hidden  u32            activation code
//! layers  u32
//! dims    (in u32, out u32) * layers
//! values  f64 * n        per layer: weights row-major, then biases
//! ```

use std::io::{Read, Write};

use super::{Activation, Mlp};
use crate::error::{Error, Result};

pub const MLP_MAGIC: &[u8; 4] = b"DQMP";
pub const MLP_VERSION: u32 = 1;

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_mlp<W: Write>(w: &mut W, mlp: &Mlp) -> Result<()> {
    w.write_all(MLP_MAGIC)?;
    write_u32(w, MLP_VERSION)?;
    write_u32(w, mlp.hidden_activation().code())?;
    write_u32(w, mlp.num_layers() as u32)?;
    for pair in mlp.dims().windows(2) {
        write_u32(w, pair[0] as u32)?;
        write_u32(w, pair[1] as u32)?;
    }
    let mut buf = Vec::with_capacity(mlp.num_params() * 8);
    for v in mlp.params() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_mlp<R: Read>(r: &mut R) -> Result<Mlp> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MLP_MAGIC {
        return Err(Error::Format(format!("bad MLP magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != MLP_VERSION {
        return Err(Error::Format(format!("unsupported MLP version {version}")));
    }
    let hidden = Activation::from_code(read_u32(r)?)
        .ok_or_else(|| Error::Format("unknown activation code".into()))?;
    let layers = read_u32(r)? as usize;
    if layers == 0 {
        return Err(Error::Format("MLP with zero layers".into()));
    }
    let mut dims = Vec::with_capacity(layers + 1);
    for l in 0..layers {
        let (n_in, n_out) = (read_u32(r)? as usize, read_u32(r)? as usize);
        if l == 0 {
            dims.push(n_in);
        } else if dims[l] != n_in {
            return Err(Error::Format(format!(
                "layer {l} input {n_in} does not chain onto previous output {}",
                dims[l]
            )));
        }
        dims.push(n_out);
    }
    let n: usize = dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Mlp::from_params(&dims, hidden, params)
}
