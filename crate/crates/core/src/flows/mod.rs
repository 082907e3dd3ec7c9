//! Transport layers: affine couplings, reversals and squashes composed into
//! the latent flow `T_phi`, the conditional dequantizer `T_lambda(.; theta)`,
//! and the rounding surjection tying the continuous embedding to the grid.

mod coupling;
mod dequant;
mod rounding;
mod sigmoid;
mod stack;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

pub use coupling::{parity_mask, CouplingLayer};
pub use dequant::{std_normal_logpdf, DequantFlow};
pub use rounding::{Rounded, RoundingSurjection};
pub use sigmoid::{sigmoid_forward, sigmoid_inverse};
pub use stack::{FlowArch, FlowLayer, FlowStack};

use crate::error::{Error, Result};
use crate::numcore::io::{read_f64, read_u32, write_f64, write_u32};
use crate::numcore::{read_mlp, write_mlp};

/// Grid level index.
pub type Level = i32;

/// Bound on the coupling log-scales: `s = c * tanh(s_raw / c)`.
pub const SCALE_CLAMP: f64 = 5.0;

/// Offsets are kept in `[delta, 1 - delta]`.
pub const BOX_DELTA: f64 = 1e-6;

/// The trainable pair `(T_phi, T_lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub phi: FlowStack,
    pub lambda: DequantFlow,
}

/// Parameter gradients, one buffer per coupling layer of each flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGrads {
    pub phi: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
}

impl FlowGrads {
    pub fn add_assign(&mut self, other: &FlowGrads) {
        for (a, b) in self
            .phi
            .iter_mut()
            .chain(self.lambda.iter_mut())
            .zip(other.phi.iter().chain(&other.lambda))
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for buf in self.phi.iter_mut().chain(self.lambda.iter_mut()) {
            for x in buf {
                *x *= factor;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.phi
            .iter()
            .chain(&self.lambda)
            .flat_map(|b| b.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn buffers(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.phi.iter().chain(&self.lambda)
    }
}

impl FlowModel {
    /// Fresh model: both flows start at the identity (zeroed last conditioner
    /// layers); `squash` terminates `T_phi` with a map onto `(0, K)^d`.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        levels: usize,
        phi_arch: &FlowArch,
        lambda_arch: &FlowArch,
        squash: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let phi = FlowStack::new(dim, phi_arch, squash.then_some(levels), rng)?;
        let lambda = DequantFlow::new(dim, levels, lambda_arch, rng)?;
        Self::from_parts(phi, lambda)
    }

    pub fn from_parts(phi: FlowStack, lambda: DequantFlow) -> Result<Self> {
        if phi.dim() != lambda.dim() {
            return Err(Error::Dimension(format!(
                "latent flow has dimension {}, dequantizer {}",
                phi.dim(),
                lambda.dim()
            )));
        }
        Ok(Self { phi, lambda })
    }

    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    pub fn levels(&self) -> usize {
        self.lambda.levels()
    }

    pub fn num_params(&self) -> usize {
        self.phi.num_params() + self.lambda.num_params()
    }

    pub fn zero_grads(&self) -> FlowGrads {
        FlowGrads {
            phi: self.phi.zero_grads(),
            lambda: self.lambda.zero_grads(),
        }
    }

    /// Parameter buffers in the same order as [`FlowGrads::buffers`].
    pub fn param_buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.phi
            .couplings_mut()
            .chain(self.lambda.couplings_mut())
            .map(|c| c.net_mut().params_mut())
            .collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(FLOW_MAGIC)?;
        write_u32(w, FLOW_VERSION)?;
        write_u32(w, self.dim() as u32)?;
        write_u32(w, self.levels() as u32)?;
        write_layers(w, self.phi.layers())?;
        write_layers(w, self.lambda.layers())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FLOW_MAGIC {
            return Err(Error::Format(format!("bad flow checkpoint magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != FLOW_VERSION {
            return Err(Error::Format(format!("unsupported flow checkpoint version {version}")));
        }
        let dim = read_u32(r)? as usize;
        let levels = read_u32(r)? as usize;
        let phi = FlowStack::from_layers(dim, read_layers(r, dim)?)?;
        let lambda = DequantFlow::from_layers(dim, levels, read_layers(r, dim)?)?;
        Self::from_parts(phi, lambda)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

pub const FLOW_MAGIC: &[u8; 4] = b"DQFL";
pub const FLOW_VERSION: u32 = 1;

fn write_layers<W: Write>(w: &mut W, layers: &[FlowLayer]) -> Result<()> {
    write_u32(w, layers.len() as u32)?;
    for layer in layers {
        match layer {
            FlowLayer::Coupling(c) => {
                write_u32(w, 0)?;
                write_u32(w, c.cond_dim() as u32)?;
                write_f64(w, c.clamp())?;
                let mask: Vec<u8> = c.mask().iter().map(|&m| m as u8).collect();
                w.write_all(&mask)?;
                write_mlp(w, c.net())?;
            }
            FlowLayer::Reverse => write_u32(w, 1)?,
            FlowLayer::Squash { levels } => {
                write_u32(w, 2)?;
                write_f64(w, *levels)?;
            }
        }
    }
    Ok(())
}

fn read_layers<R: Read>(r: &mut R, dim: usize) -> Result<Vec<FlowLayer>> {
    let n = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let layer = match read_u32(r)? {
            0 => {
                let cond_dim = read_u32(r)? as usize;
                let clamp = read_f64(r)?;
                let mut mask = vec![0u8; dim];
                r.read_exact(&mut mask)?;
                let mask: Vec<bool> = mask.iter().map(|&b| b != 0).collect();
                let net = read_mlp(r)?;
                FlowLayer::Coupling(CouplingLayer::from_parts(&mask, cond_dim, clamp, net)?)
            }
            1 => FlowLayer::Reverse,
            2 => FlowLayer::Squash {
                levels: read_f64(r)?,
            },
            k => return Err(Error::Format(format!("unknown flow layer kind {k}"))),
        };
        layers.push(layer);
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let arch = FlowArch {
            depth: 4,
            hidden: vec![6],
            clamp: 5.0,
        };
        let mut model = FlowModel::new(3, 4, &arch, &arch, true, &mut rng).unwrap();
        for buf in model.param_buffers_mut() {
            for p in buf.iter_mut() {
                *p = rng.random_range(-1.0..1.0);
            }
        }
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        let back = FlowModel::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn checkpoint_rejects_wrong_magic() {
        let model = FlowModel::from_parts(FlowStack::identity(2), DequantFlow::bare(2, 2)).unwrap();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        bytes[1] = b'?';
        assert!(matches!(
            FlowModel::read_from(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn mismatched_dims_rejected() {
        assert!(FlowModel::from_parts(FlowStack::identity(2), DequantFlow::bare(3, 2)).is_err());
    }
}
