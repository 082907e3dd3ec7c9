//! Latent-space Metropolis-Hastings over a trained transport map, the
//! push-forward back to the grid, and Gibbs / single-site MH baselines.

mod discrete;
mod latent;
mod store;

pub use discrete::{discrete_mh_step, gibbs_step, DiscreteChain, DiscreteChainSet, DiscreteKernel};
pub use latent::{hmc_latent_step, leapfrog, mh_latent_step, run_chains, Chain, ChainSet, LatentKernel};
pub use store::{read_samples_binary, SAMPLES_MAGIC, SAMPLES_VERSION};

use rayon::prelude::*;

use crate::error::Result;
use crate::flows::{FlowModel, Level, RoundingSurjection};
use crate::targets::DiscreteTarget;
use crate::train::LatentDensity;

/// Default latent random-walk step size.
pub const DEFAULT_STEP_SIZE: f64 = 0.25;

/// An unnormalized log-density on `R^d`. `-inf` marks points outside the support.
pub trait LatentTarget: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, z: &[f64]) -> f64;
}

/// A latent target with a gradient of its continuous part.
pub trait GradTarget: LatentTarget {
    fn log_density_and_grad(&self, z: &[f64]) -> (f64, Vec<f64>);
}

impl<T: DiscreteTarget + ?Sized> LatentTarget for LatentDensity<'_, T> {
    fn dim(&self) -> usize {
        LatentDensity::dim(self)
    }
    fn log_density(&self, z: &[f64]) -> f64 {
        LatentDensity::log_density(self, z)
    }
}

impl<T: DiscreteTarget + ?Sized> GradTarget for LatentDensity<'_, T> {
    fn log_density_and_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        LatentDensity::log_density_and_grad(self, z)
    }
}

/// Kept latent states, laid out `[chain][sample][coordinate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSamples {
    pub n_chains: usize,
    pub per_chain: usize,
    pub dim: usize,
    pub thin: usize,
    pub data: Vec<f64>,
    pub wall_clock_s: f64,
}

impl LatentSamples {
    pub fn len(&self) -> usize {
        self.n_chains * self.per_chain
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, chain: usize, k: usize) -> &[f64] {
        let at = (chain * self.per_chain + k) * self.dim;
        &self.data[at..at + self.dim]
    }
}

/// Kept grid states, laid out `[chain][sample][coordinate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSamples {
    pub n_chains: usize,
    pub per_chain: usize,
    pub dim: usize,
    pub thin: usize,
    pub data: Vec<Level>,
    /// Samples whose pre-image left the grid and were clamped.
    pub out_of_domain: usize,
    pub wall_clock_s: f64,
}

impl DiscreteSamples {
    pub fn len(&self) -> usize {
        self.n_chains * self.per_chain
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, chain: usize, k: usize) -> &[Level] {
        let at = (chain * self.per_chain + k) * self.dim;
        &self.data[at..at + self.dim]
    }

    /// All samples of one chain, in order.
    pub fn chain(&self, chain: usize) -> &[Level] {
        let n = self.per_chain * self.dim;
        &self.data[chain * n..(chain + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Level]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.len())
    }

    /// `log pi` of every sample, in storage order.
    pub fn log_probs<T: DiscreteTarget + ?Sized>(&self, target: &T) -> Vec<f64> {
        self.data
            .par_chunks_exact(self.dim.max(1))
            .take(self.len())
            .map(|t| target.log_prob(t))
            .collect()
    }
}

/// `theta = floor(T_phi(z))` for every latent sample, clamped into the grid
/// and counted in `out_of_domain` when clamping was needed.
pub fn push_samples(model: &FlowModel, samples: &LatentSamples) -> Result<DiscreteSamples> {
    let rounding = RoundingSurjection::new(model.dim(), model.levels());
    let pushed = samples
        .data
        .par_chunks_exact(samples.dim.max(1))
        .take(samples.len())
        .map(|z| {
            let (x, _) = model.phi.forward(z)?;
            let r = rounding.round_forward(&x)?;
            Ok((r.theta, r.out_of_domain))
        })
        .collect::<Result<Vec<_>>>()?;
    let out_of_domain = pushed.iter().filter(|(_, o)| *o).count();
    Ok(DiscreteSamples {
        n_chains: samples.n_chains,
        per_chain: samples.per_chain,
        dim: samples.dim,
        thin: samples.thin,
        data: pushed.into_iter().flat_map(|(t, _)| t).collect(),
        out_of_domain,
        wall_clock_s: samples.wall_clock_s,
    })
}
