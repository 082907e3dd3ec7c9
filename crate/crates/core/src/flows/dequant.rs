use rand::Rng;

use super::sigmoid::{check_open_unit, clamp_unit, log_sigmoid_derivative, logit, sigmoid};
use super::stack::{
    coupling_schedule, layers_backward_inverse, layers_forward_tape, layers_inverse_tape,
    zero_grads, FlowArch, FlowLayer, LayerTape,
};
use super::{CouplingLayer, Level};
use crate::error::{ensure_dim, ensure_finite, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log density of the standard normal at `e`.
pub fn std_normal_logpdf(e: &[f64]) -> f64 {
    -0.5 * e.iter().map(|v| v * v).sum::<f64>() - 0.5 * e.len() as f64 * LN_2PI
}

/// Conditional dequantizer `u = T_lambda(eps; theta)`: affine couplings whose
/// conditioners also see the min-max encoded cell index, then a sigmoid onto
/// the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct DequantFlow {
    dim: usize,
    levels: usize,
    layers: Vec<FlowLayer>,
}

#[derive(Debug, Clone)]
pub(crate) struct DequantTape {
    layers: Vec<LayerTape>,
    u: Vec<f64>,
}

impl DequantFlow {
    /// No couplings: `u = sigmoid(eps)` independently of `theta`.
    pub fn bare(dim: usize, levels: usize) -> Self {
        Self {
            dim,
            levels,
            layers: Vec::new(),
        }
    }

    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        levels: usize,
        arch: &FlowArch,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = coupling_schedule(dim, dim, arch, rng)?;
        Self::from_layers(dim, levels, layers)
    }

    pub fn from_layers(dim: usize, levels: usize, layers: Vec<FlowLayer>) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("a grid needs at least one level".into()));
        }
        for layer in &layers {
            match layer {
                FlowLayer::Coupling(c) => {
                    ensure_dim("dequantizer coupling", dim, c.dim())?;
                    ensure_dim("dequantizer condition", dim, c.cond_dim())?;
                }
                FlowLayer::Reverse => {}
                FlowLayer::Squash { .. } => {
                    return Err(Error::Config(
                        "dequantizer layers cannot contain a squash".into(),
                    ))
                }
            }
        }
        Ok(Self {
            dim,
            levels,
            layers,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.levels
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

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        zero_grads(&self.layers)
    }

    /// `2 theta / (K - 1) - 1`, or zeros for a single-level grid.
    pub fn encode(&self, theta: &[Level]) -> Vec<f64> {
        if self.levels <= 1 {
            return vec![0.0; theta.len()];
        }
        let span = (self.levels - 1) as f64;
        theta.iter().map(|&t| 2.0 * t as f64 / span - 1.0).collect()
    }

    fn check_theta(&self, theta: &[Level]) -> Result<()> {
        ensure_dim("cell index", self.dim, theta.len())?;
        if let Some(t) = theta
            .iter()
            .find(|&&t| t < 0 || t as usize >= self.levels)
        {
            return Err(Error::Domain(format!(
                "level {t} outside 0..{}",
                self.levels
            )));
        }
        Ok(())
    }

    /// Pushes Gaussian noise through the dequantizer. Returns the offset
    /// `u in (0,1)^d` and `log q(u | theta) = log N(eps) - log|det T'(eps)|`.
    pub fn sample(&self, theta: &[Level], eps: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_theta(theta)?;
        ensure_dim("noise", self.dim, eps.len())?;
        ensure_finite("noise", eps)?;
        let cond = self.encode(theta);
        let (v, ld_coupling, _) = layers_forward_tape(&self.layers, eps, &cond);
        ensure_finite("dequantizer pre-activation", &v)?;
        let mut logdet = ld_coupling;
        let mut u = Vec::with_capacity(self.dim);
        for &x in &v {
            logdet += log_sigmoid_derivative(x);
            u.push(clamp_unit(sigmoid(x)));
        }
        let log_q = std_normal_logpdf(eps) - logdet;
        if !log_q.is_finite() {
            return Err(Error::Numeric("non-finite dequantization density".into()));
        }
        Ok((u, log_q))
    }

    /// `log q(u | theta)` by inverting the dequantizer. Also returns the noise
    /// `eps = T_lambda^{-1}(u; theta)`.
    pub fn log_q(&self, theta: &[Level], u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_theta(theta)?;
        ensure_dim("offset", self.dim, u.len())?;
        check_open_unit("offset", u)?;
        let (eps, ld_fwd, _) = self.inverse_tape(theta, u);
        ensure_finite("recovered noise", &eps)?;
        let log_q = std_normal_logpdf(&eps) - ld_fwd;
        if !log_q.is_finite() {
            return Err(Error::Numeric("non-finite dequantization density".into()));
        }
        Ok((log_q, eps))
    }

    /// Unchecked inverse. Returns `eps` and the log-determinant of the
    /// *forward* map evaluated at `eps`.
    pub(crate) fn inverse_tape(&self, theta: &[Level], u: &[f64]) -> (Vec<f64>, f64, DequantTape) {
        let cond = self.encode(theta);
        let v: Vec<f64> = u.iter().map(|&p| logit(p)).collect();
        let ld_sigmoid: f64 = u.iter().map(|&p| p.ln() + (1.0 - p).ln()).sum();
        let (eps, ld_coupling_inv, layers) = layers_inverse_tape(&self.layers, &v, &cond);
        let tape = DequantTape {
            layers,
            u: u.to_vec(),
        };
        (eps, ld_sigmoid - ld_coupling_inv, tape)
    }

    /// Pulls `(g_eps, g_ld_fwd)` back to the offset `u`, accumulating
    /// coupling parameter gradients into `grads`.
    pub(crate) fn backward_inverse(
        &self,
        tape: &DequantTape,
        g_eps: &[f64],
        g_ld_fwd: f64,
        grads: &mut [Vec<f64>],
    ) -> Vec<f64> {
        // ld_fwd = ld_sigmoid - ld_coupling_inv
        let g_v = layers_backward_inverse(&self.layers, &tape.layers, g_eps, -g_ld_fwd, grads);
        g_v.iter()
            .zip(&tape.u)
            .map(|(&g, &p)| g / (p * (1.0 - p)) + g_ld_fwd * (1.0 / p - 1.0 / (1.0 - p)))
            .collect()
    }
}
