use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{LatentSamples, LatentTarget, GradTarget};
use crate::error::{Error, Result};

/// Redraws of the initial state before giving up on finding support.
const INIT_ATTEMPTS: usize = 10_000;

/// One latent-space Markov chain with its own random stream.
#[derive(Debug, Clone)]
pub struct Chain {
    pub z: Vec<f64>,
    pub log_density: f64,
    pub proposals: u64,
    pub accepted: u64,
    /// Proposals rejected because the target was not finite there.
    pub rejected_nonfinite: u64,
    rng: ChaCha8Rng,
}

impl Chain {
    /// Starts from `z ~ N(0, I)`, redrawing until the target is finite.
    pub fn new<L: LatentTarget + ?Sized>(target: &L, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = target.dim();
        for _ in 0..INIT_ATTEMPTS {
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let lp = target.log_density(&z);
            if lp.is_finite() {
                return Ok(Self {
                    z,
                    log_density: lp,
                    proposals: 0,
                    accepted: 0,
                    rejected_nonfinite: 0,
                    rng,
                });
            }
        }
        Err(Error::Numeric(format!(
            "no finite starting point in {INIT_ATTEMPTS} standard normal draws"
        )))
    }

    /// Starts at a given state.
    pub fn at<L: LatentTarget + ?Sized>(target: &L, z: Vec<f64>, seed: u64) -> Result<Self> {
        let lp = target.log_density(&z);
        if !lp.is_finite() {
            return Err(Error::Numeric(format!("log-density {lp} at the starting point")));
        }
        Ok(Self {
            z,
            log_density: lp,
            proposals: 0,
            accepted: 0,
            rejected_nonfinite: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    pub fn reset_counters(&mut self) {
        self.proposals = 0;
        self.accepted = 0;
        self.rejected_nonfinite = 0;
    }

    fn accept_or_reject(&mut self, proposal: Vec<f64>, lp: f64, log_ratio: f64) -> bool {
        self.proposals += 1;
        if !lp.is_finite() || log_ratio.is_nan() {
            self.rejected_nonfinite += 1;
            return false;
        }
        let u: f64 = self.rng.random();
        if u.ln() < log_ratio {
            self.z = proposal;
            self.log_density = lp;
            self.accepted += 1;
            true
        } else {
            false
        }
    }
}

/// Random-walk Metropolis step `z' = z + sigma * xi`. Returns whether the
/// proposal was accepted.
pub fn mh_latent_step<L: LatentTarget + ?Sized>(chain: &mut Chain, target: &L, sigma: f64) -> bool {
    let proposal: Vec<f64> = chain
        .z
        .iter()
        .map(|&v| v + sigma * chain.rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lp = target.log_density(&proposal);
    let ratio = lp - chain.log_density;
    chain.accept_or_reject(proposal, lp, ratio)
}

/// Hamiltonian step with unit mass, `n_leapfrog` leapfrog updates of size
/// `step_size`, and a Metropolis correction on the total energy.
pub fn hmc_latent_step<L: GradTarget + ?Sized>(
    chain: &mut Chain,
    target: &L,
    step_size: f64,
    n_leapfrog: usize,
) -> bool {
    let d = chain.z.len();
    let p0: Vec<f64> = (0..d).map(|_| chain.rng.sample(StandardNormal)).collect();
    let (z1, p1, lp1) = leapfrog(target, &chain.z, &p0, step_size, n_leapfrog);
    let kinetic = |p: &[f64]| 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    let h0 = -chain.log_density + kinetic(&p0);
    let h1 = -lp1 + kinetic(&p1);
    chain.accept_or_reject(z1, lp1, h0 - h1)
}

/// Leapfrog integration; returns the end state, momentum and log-density.
pub fn leapfrog<L: GradTarget + ?Sized>(
    target: &L,
    z0: &[f64],
    p0: &[f64],
    step_size: f64,
    n_steps: usize,
) -> (Vec<f64>, Vec<f64>, f64) {
    let mut z = z0.to_vec();
    let mut p = p0.to_vec();
    let (mut lp, mut g) = target.log_density_and_grad(&z);
    for _ in 0..n_steps {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * step_size * gi;
        }
        for (zi, pi) in z.iter_mut().zip(&p) {
            *zi += step_size * pi;
        }
        (lp, g) = target.log_density_and_grad(&z);
        if !lp.is_finite() {
            break;
        }
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * step_size * gi;
        }
    }
    (z, p, lp)
}

/// Transition kernel for latent chains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentKernel {
    Mh { step_size: f64 },
    Hmc { step_size: f64, n_leapfrog: usize },
}

/// Independent latent chains sharing one kernel.
#[derive(Debug, Clone)]
pub struct ChainSet {
    pub chains: Vec<Chain>,
    pub kernel: LatentKernel,
    pub thin: usize,
}

impl ChainSet {
    /// Chain `i` draws from the stream seeded with `master_seed ^ i`.
    pub fn new<L: LatentTarget + ?Sized>(
        target: &L,
        n_chains: usize,
        master_seed: u64,
        kernel: LatentKernel,
        thin: usize,
    ) -> Result<Self> {
        if n_chains == 0 || thin == 0 {
            return Err(Error::Config("need at least one chain and a positive thinning".into()));
        }
        let chains = (0..n_chains)
            .map(|i| Chain::new(target, master_seed ^ i as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { chains, kernel, thin })
    }

    pub fn step<L: GradTarget + ?Sized>(&mut self, target: &L) {
        let kernel = self.kernel;
        self.chains
            .par_iter_mut()
            .for_each(|c| step_chain(c, target, kernel));
    }

    /// Advances every chain `steps` times without keeping states; counters are reset.
    pub fn burn_in<L: GradTarget + ?Sized>(&mut self, target: &L, steps: usize) {
        let kernel = self.kernel;
        self.chains.par_iter_mut().for_each(|c| {
            for _ in 0..steps {
                step_chain(c, target, kernel);
            }
            c.reset_counters();
        });
    }

    pub fn acceptance_rate(&self) -> f64 {
        let (a, p) = self
            .chains
            .iter()
            .fold((0, 0), |(a, p), c| (a + c.accepted, p + c.proposals));
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }

    /// Robbins-Monro tuning of the shared step size towards `target_rate`
    /// acceptance over `steps` steps, then frozen. Counters are reset.
    pub fn adapt<L: GradTarget + ?Sized>(&mut self, target: &L, steps: usize, target_rate: f64) {
        let mut log_step = self.step_size().ln();
        for t in 0..steps {
            let before: u64 = self.chains.iter().map(|c| c.accepted).sum();
            self.step(target);
            let after: u64 = self.chains.iter().map(|c| c.accepted).sum();
            let rate = (after - before) as f64 / self.chains.len() as f64;
            log_step += (rate - target_rate) / ((t + 1) as f64).powf(0.6);
            self.set_step_size(log_step.exp());
        }
        for c in &mut self.chains {
            c.reset_counters();
        }
    }

    pub fn step_size(&self) -> f64 {
        match self.kernel {
            LatentKernel::Mh { step_size } | LatentKernel::Hmc { step_size, .. } => step_size,
        }
    }

    fn set_step_size(&mut self, s: f64) {
        match &mut self.kernel {
            LatentKernel::Mh { step_size } | LatentKernel::Hmc { step_size, .. } => *step_size = s,
        }
    }
}

fn step_chain<L: GradTarget + ?Sized>(chain: &mut Chain, target: &L, kernel: LatentKernel) {
    match kernel {
        LatentKernel::Mh { step_size } => {
            mh_latent_step(chain, target, step_size);
        }
        LatentKernel::Hmc {
            step_size,
            n_leapfrog,
        } => {
            hmc_latent_step(chain, target, step_size, n_leapfrog);
        }
    }
}

/// Runs every chain for `n_steps`, keeping every `thin`-th state.
pub fn run_chains<L: GradTarget + ?Sized>(
    set: &mut ChainSet,
    target: &L,
    n_steps: usize,
) -> LatentSamples {
    let start = Instant::now();
    let kernel = set.kernel;
    let thin = set.thin;
    let kept = n_steps / thin;
    let d = target.dim();
    let per_chain: Vec<Vec<f64>> = set
        .chains
        .par_iter_mut()
        .map(|c| {
            let mut out = Vec::with_capacity(kept * d);
            for s in 0..n_steps {
                step_chain(c, target, kernel);
                if (s + 1) % thin == 0 {
                    out.extend_from_slice(&c.z);
                }
            }
            out
        })
        .collect();
    LatentSamples {
        n_chains: set.chains.len(),
        per_chain: kept,
        dim: d,
        thin,
        data: per_chain.concat(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    }
}
