use rand::Rng;

use super::coupling::{parity_mask, CouplingLayer, CouplingTape};
use super::dequant::std_normal_logpdf;
use crate::numcore::{ndtr, ndtri};
use crate::error::{ensure_dim, ensure_finite, Error, Result};

/// One bijective stage of a flow.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowLayer {
    Coupling(CouplingLayer),
    /// Coordinate reversal `x_j = z_{d-1-j}`.
    Reverse,
    /// Elementwise `x = levels * Phi(y)`, mapping onto the open box
    /// `(0, levels)^d`; pushes a standard normal onto the uniform law.
    Squash { levels: f64 },
}

/// Architecture knobs shared by both flows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowArch {
    pub depth: usize,
    pub hidden: Vec<usize>,
    pub clamp: f64,
}

impl Default for FlowArch {
    fn default() -> Self {
        Self {
            depth: 8,
            hidden: vec![64, 64],
            clamp: super::SCALE_CLAMP,
        }
    }
}

/// Alternating-parity couplings with a coordinate reversal after every pair,
/// plus a trailing reversal when needed so a fresh stack is the identity.
pub(crate) fn coupling_schedule<R: Rng + ?Sized>(
    dim: usize,
    cond_dim: usize,
    arch: &FlowArch,
    rng: &mut R,
) -> Result<Vec<FlowLayer>> {
    let mut layers = Vec::new();
    for i in 0..arch.depth {
        let mask = parity_mask(dim, i % 2);
        layers.push(FlowLayer::Coupling(CouplingLayer::new(
            &mask,
            cond_dim,
            &arch.hidden,
            arch.clamp,
            rng,
        )?));
        if i % 2 == 1 && i + 1 < arch.depth && dim > 1 {
            layers.push(FlowLayer::Reverse);
        }
    }
    let flips = layers.iter().filter(|l| matches!(l, FlowLayer::Reverse)).count();
    if flips % 2 == 1 {
        layers.push(FlowLayer::Reverse);
    }
    Ok(layers)
}

#[derive(Debug, Clone)]
pub(crate) enum LayerTape {
    Coupling(CouplingTape),
    Reverse,
    /// Pre-squash values `y`, recorded in both directions.
    Squash(Vec<f64>),
}

pub(crate) fn layers_forward_tape(
    layers: &[FlowLayer],
    z: &[f64],
    cond: &[f64],
) -> (Vec<f64>, f64, Vec<LayerTape>) {
    let mut v = z.to_vec();
    let mut logdet = 0.0;
    let mut tapes = Vec::with_capacity(layers.len());
    for layer in layers {
        match layer {
            FlowLayer::Coupling(c) => {
                let (out, ld, tape) = c.forward_tape(&v, cond);
                v = out;
                logdet += ld;
                tapes.push(LayerTape::Coupling(tape));
            }
            FlowLayer::Reverse => {
                v.reverse();
                tapes.push(LayerTape::Reverse);
            }
            FlowLayer::Squash { levels } => {
                let ys = v.clone();
                for x in v.iter_mut() {
                    logdet += levels.ln() + std_normal_logpdf(&[*x]);
                    *x = levels * ndtr(*x);
                }
                tapes.push(LayerTape::Squash(ys));
            }
        }
    }
    (v, logdet, tapes)
}

pub(crate) fn layers_inverse_tape(
    layers: &[FlowLayer],
    x: &[f64],
    cond: &[f64],
) -> (Vec<f64>, f64, Vec<LayerTape>) {
    let mut v = x.to_vec();
    let mut logdet = 0.0;
    let mut tapes = Vec::with_capacity(layers.len());
    for layer in layers.iter().rev() {
        match layer {
            FlowLayer::Coupling(c) => {
                let (out, ld, tape) = c.inverse_tape(&v, cond);
                v = out;
                logdet += ld;
                tapes.push(LayerTape::Coupling(tape));
            }
            FlowLayer::Reverse => {
                v.reverse();
                tapes.push(LayerTape::Reverse);
            }
            FlowLayer::Squash { levels } => {
                for x in v.iter_mut() {
                    *x = ndtri(*x / levels);
                    logdet -= levels.ln() + std_normal_logpdf(&[*x]);
                }
                tapes.push(LayerTape::Squash(v.clone()));
            }
        }
    }
    tapes.reverse();
    (v, logdet, tapes)
}

/// Backprop through a forward pass. `grads` holds one buffer per coupling
/// layer, in layer order.
pub(crate) fn layers_backward_forward(
    layers: &[FlowLayer],
    tapes: &[LayerTape],
    g_out: &[f64],
    g_logdet: f64,
    grads: &mut [Vec<f64>],
) -> Vec<f64> {
    let mut g = g_out.to_vec();
    let mut ci = layers
        .iter()
        .filter(|l| matches!(l, FlowLayer::Coupling(_)))
        .count();
    for (layer, tape) in layers.iter().zip(tapes).rev() {
        match (layer, tape) {
            (FlowLayer::Coupling(c), LayerTape::Coupling(t)) => {
                ci -= 1;
                g = c.backward_forward(t, &g, g_logdet, &mut grads[ci]);
            }
            (FlowLayer::Reverse, LayerTape::Reverse) => g.reverse(),
            (FlowLayer::Squash { levels }, LayerTape::Squash(ys)) => {
                for (gj, &y) in g.iter_mut().zip(ys) {
                    *gj = *gj * levels * std_normal_logpdf(&[y]).exp() - g_logdet * y;
                }
            }
            _ => unreachable!("tape does not match layer"),
        }
    }
    g
}

/// Backprop through an inverse pass (tapes in layer order).
pub(crate) fn layers_backward_inverse(
    layers: &[FlowLayer],
    tapes: &[LayerTape],
    g_out: &[f64],
    g_logdet: f64,
    grads: &mut [Vec<f64>],
) -> Vec<f64> {
    let mut g = g_out.to_vec();
    let mut ci = 0;
    for (layer, tape) in layers.iter().zip(tapes) {
        match (layer, tape) {
            (FlowLayer::Coupling(c), LayerTape::Coupling(t)) => {
                g = c.backward_inverse(t, &g, g_logdet, &mut grads[ci]);
                ci += 1;
            }
            (FlowLayer::Reverse, LayerTape::Reverse) => g.reverse(),
            (FlowLayer::Squash { levels }, LayerTape::Squash(ys)) => {
                for (gj, &y) in g.iter_mut().zip(ys) {
                    *gj = (*gj + g_logdet * y) / (levels * std_normal_logpdf(&[y]).exp());
                }
            }
            _ => unreachable!("tape does not match layer"),
        }
    }
    g
}

pub(crate) fn zero_grads(layers: &[FlowLayer]) -> Vec<Vec<f64>> {
    layers
        .iter()
        .filter_map(|l| match l {
            FlowLayer::Coupling(c) => Some(vec![0.0; c.net().num_params()]),
            _ => None,
        })
        .collect()
}

/// The latent-to-embedding transport `T_phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStack {
    dim: usize,
    layers: Vec<FlowLayer>,
}

impl FlowStack {
    /// The empty stack (identity map).
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            layers: Vec::new(),
        }
    }

    pub fn from_layers(dim: usize, layers: Vec<FlowLayer>) -> Result<Self> {
        for layer in &layers {
            match layer {
                FlowLayer::Coupling(c) => {
                    ensure_dim("coupling layer", dim, c.dim())?;
                    if c.cond_dim() != 0 {
                        return Err(Error::Config(
                            "latent flow couplings take no condition".into(),
                        ));
                    }
                }
                FlowLayer::Squash { levels } if !(*levels > 0.0) => {
                    return Err(Error::Config(format!("squash levels must be positive, got {levels}")));
                }
                _ => {}
            }
        }
        Ok(Self { dim, layers })
    }

    /// RealNVP-style stack, optionally finished by a normal-CDF squash onto
    /// `(0, levels)^d`.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        arch: &FlowArch,
        squash_levels: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = coupling_schedule(dim, 0, arch, rng)?;
        if let Some(k) = squash_levels {
            layers.push(FlowLayer::Squash { levels: k as f64 });
        }
        Self::from_layers(dim, layers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[FlowLayer] {
        &self.layers
    }

    pub fn couplings(&self) -> impl Iterator<Item = &CouplingLayer> {
        self.layers.iter().filter_map(|l| match l {
            FlowLayer::Coupling(c) => Some(c),
            _ => None,
        })
    }

    pub fn couplings_mut(&mut self) -> impl Iterator<Item = &mut CouplingLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            FlowLayer::Coupling(c) => Some(c),
            _ => None,
        })
    }

    pub fn num_params(&self) -> usize {
        self.couplings().map(|c| c.net().num_params()).sum()
    }

    /// `z -> (x, log|det dx/dz|)`.
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        ensure_dim("flow input", self.dim, z.len())?;
        ensure_finite("flow input", z)?;
        let (x, ld, _) = layers_forward_tape(&self.layers, z, &[]);
        ensure_finite("flow output", &x)?;
        if !ld.is_finite() {
            return Err(Error::Numeric("non-finite flow log-determinant".into()));
        }
        Ok((x, ld))
    }

    /// `x -> (z, log|det dz/dx|)`.
    pub fn inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        ensure_dim("flow input", self.dim, x.len())?;
        ensure_finite("flow input", x)?;
        for layer in &self.layers {
            if let FlowLayer::Squash { levels } = layer {
                if let Some(v) = x.iter().find(|&&v| !(v > 0.0 && v < *levels)) {
                    return Err(Error::Domain(format!(
                        "{v} outside the squashed range (0, {levels})"
                    )));
                }
            }
        }
        let (z, ld, _) = layers_inverse_tape(&self.layers, x, &[]);
        ensure_finite("flow output", &z)?;
        if !ld.is_finite() {
            return Err(Error::Numeric("non-finite flow log-determinant".into()));
        }
        Ok((z, ld))
    }

    pub(crate) fn forward_tape(&self, z: &[f64]) -> (Vec<f64>, f64, Vec<LayerTape>) {
        layers_forward_tape(&self.layers, z, &[])
    }

    pub(crate) fn backward_forward(
        &self,
        tapes: &[LayerTape],
        g_x: &[f64],
        g_logdet: f64,
        grads: &mut [Vec<f64>],
    ) -> Vec<f64> {
        layers_backward_forward(&self.layers, tapes, g_x, g_logdet, grads)
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        zero_grads(&self.layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn forced_scale(dim: usize, parity: usize, s: f64) -> FlowLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = CouplingLayer::new(&parity_mask(dim, parity), 0, &[4], 5.0, &mut rng).unwrap();
        let nb = c.transformed().len();
        let last = c.net().num_layers() - 1;
        c.net_mut().bias_mut(last)[..nb].fill(5.0 * (s / 5.0).atanh());
        FlowLayer::Coupling(c)
    }

    #[test]
    fn empty_stack_is_identity() {
        let s = FlowStack::identity(3);
        let (x, ld) = s.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn two_forced_layers_double_everything() {
        let d = 4;
        let ln2 = 2f64.ln();
        let s = FlowStack::from_layers(d, vec![forced_scale(d, 0, ln2), forced_scale(d, 1, ln2)]).unwrap();
        let z = [0.5, -1.0, 1.5, 2.0];
        let (x, ld) = s.forward(&z).unwrap();
        for (a, b) in x.iter().zip(&z) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        assert!((ld - d as f64 * ln2).abs() < 1e-12);
    }

    #[test]
    fn squash_inverse_checks_range() {
        let s = FlowStack::from_layers(1, vec![FlowLayer::Squash { levels: 8.0 }]).unwrap();
        let (x, _) = s.forward(&[0.0]).unwrap();
        assert_eq!(x, vec![4.0]);
        assert!(matches!(s.inverse(&[8.0]), Err(Error::Domain(_))));
        let (z, ld) = s.inverse(&[4.0]).unwrap();
        assert!(z[0].abs() < 1e-15);
        // log 8 + log N(0)
        assert!((ld + 8f64.ln() - 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn rejects_conditioned_couplings() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = CouplingLayer::new(&parity_mask(2, 0), 2, &[4], 5.0, &mut rng).unwrap();
        assert!(FlowStack::from_layers(2, vec![FlowLayer::Coupling(c)]).is_err());
    }

    #[test]
    fn schedule_interleaves_reversals() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arch = FlowArch {
            depth: 6,
            hidden: vec![4],
            clamp: 5.0,
        };
        let s = FlowStack::new(4, &arch, None, &mut rng).unwrap();
        let kinds: Vec<char> = s
            .layers()
            .iter()
            .map(|l| match l {
                FlowLayer::Coupling(_) => 'C',
                FlowLayer::Reverse => 'R',
                FlowLayer::Squash { .. } => 'S',
            })
            .collect();
        assert_eq!(kinds.iter().collect::<String>(), "CCRCCRCC");
        let arch = FlowArch { depth: 4, ..arch };
        let s = FlowStack::new(4, &arch, None, &mut rng).unwrap();
        assert_eq!(s.layers().len(), 6);
        assert!(matches!(s.layers()[5], FlowLayer::Reverse));
    }

    #[test]
    fn fresh_stack_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = FlowStack::new(3, &FlowArch::default(), None, &mut rng).unwrap();
        let z = [0.1, -2.0, 0.7];
        let (x, ld) = s.forward(&z).unwrap();
        assert_eq!(x, z.to_vec());
        assert_eq!(ld, 0.0);
    }
}
