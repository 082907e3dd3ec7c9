//! Sample files.
//!
//! CSV: header `chain_id,step,theta_0,...`, one row per kept sample, where
//! `step` counts transitions since sampling began.
//!
//! Binary, little-endian:
//!
//! ```text
//! magic     b"DQSM"
//! version   u32
//! n_chains  u32
//! per_chain u32
//! dim       u32
//! thin      u32
//! values    i32 * n_chains * per_chain * dim, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::DiscreteSamples;
use crate::error::{Error, Result};
use crate::numcore::io::{read_u32, write_u32};

pub const SAMPLES_MAGIC: &[u8; 4] = b"DQSM";
pub const SAMPLES_VERSION: u32 = 1;

impl DiscreteSamples {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["chain_id".to_string(), "step".to_string()];
        header.extend((0..self.dim).map(|i| format!("theta_{i}")));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(self.dim + 2);
        for c in 0..self.n_chains {
            for k in 0..self.per_chain {
                row.clear();
                row.push(c.to_string());
                row.push(((k + 1) * self.thin).to_string());
                row.extend(self.sample(c, k).iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_binary_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(SAMPLES_MAGIC)?;
        write_u32(w, SAMPLES_VERSION)?;
        for v in [self.n_chains, self.per_chain, self.dim, self.thin] {
            let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit the sample header")))?;
            write_u32(w, v)?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_binary_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Reads a binary sample file. Timing and clamp counts are not stored and
/// come back as zero.
pub fn read_samples_binary<R: Read>(r: &mut R) -> Result<DiscreteSamples> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SAMPLES_MAGIC {
        return Err(Error::Format(format!("sample file magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != SAMPLES_VERSION {
        return Err(Error::Format(format!("unsupported sample file version {version}")));
    }
    let n_chains = read_u32(r)? as usize;
    let per_chain = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    let thin = read_u32(r)? as usize;
    let n = n_chains
        .checked_mul(per_chain)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::Format("sample header overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(Error::Format(format!(
            "sample payload has {} bytes, header implies {}",
            bytes.len(),
            n * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(DiscreteSamples {
        n_chains,
        per_chain,
        dim,
        thin,
        data,
        out_of_domain: 0,
        wall_clock_s: 0.0,
    })
}

impl DiscreteSamples {
    pub fn read_binary(path: &Path) -> Result<Self> {
        read_samples_binary(&mut BufReader::new(File::open(path)?))
    }
}
