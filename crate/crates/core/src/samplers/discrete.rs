use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::DiscreteSamples;
use crate::error::{Error, Result};
use crate::flows::Level;
use crate::numcore::log_sum_exp;
use crate::targets::{in_grid, DiscreteTarget};

/// Baseline kernels acting directly on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscreteKernel {
    /// One full sweep of single-site conditional updates in random order.
    Gibbs,
    /// One single-site Metropolis proposal: a uniformly chosen coordinate
    /// set to a uniformly chosen level.
    Mh,
}

/// One grid-space chain.
#[derive(Debug, Clone)]
pub struct DiscreteChain {
    pub theta: Vec<Level>,
    pub proposals: u64,
    pub accepted: u64,
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl DiscreteChain {
    /// Starts at the target's preferred state, or uniformly at random.
    pub fn new<T: DiscreteTarget + ?Sized>(target: &T, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = match target.initial_state() {
            Some(t) => t,
            None => (0..target.dim())
                .map(|_| rng.random_range(0..target.levels()) as Level)
                .collect(),
        };
        Self::at(target, theta, rng)
    }

    fn at<T: DiscreteTarget + ?Sized>(target: &T, theta: Vec<Level>, rng: ChaCha8Rng) -> Result<Self> {
        if theta.len() != target.dim() || !in_grid(&theta, target.levels()) {
            return Err(Error::Domain(format!("starting state {theta:?} is not on the grid")));
        }
        Ok(Self {
            order: (0..theta.len()).collect(),
            theta,
            proposals: 0,
            accepted: 0,
            rng,
        })
    }

    /// Starts at a given state.
    pub fn starting_at<T: DiscreteTarget + ?Sized>(target: &T, theta: Vec<Level>, seed: u64) -> Result<Self> {
        Self::at(target, theta, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Resamples every coordinate from its full conditional, in a fresh random order.
pub fn gibbs_step<T: DiscreteTarget + ?Sized>(chain: &mut DiscreteChain, target: &T) {
    if target.levels() < 2 {
        return;
    }
    let mut order = std::mem::take(&mut chain.order);
    order.shuffle(&mut chain.rng);
    for &i in &order {
        let logits = target.conditional_log_probs(&chain.theta, i);
        let norm = log_sum_exp(&logits);
        let u: f64 = chain.rng.random();
        let mut acc = 0.0;
        let mut pick = logits.len() - 1;
        for (k, l) in logits.iter().enumerate() {
            acc += (l - norm).exp();
            if u < acc {
                pick = k;
                break;
            }
        }
        chain.theta[i] = pick as Level;
        chain.proposals += 1;
        chain.accepted += 1;
    }
    chain.order = order;
}

/// Single-site Metropolis step. Returns whether the proposal was accepted.
pub fn discrete_mh_step<T: DiscreteTarget + ?Sized>(chain: &mut DiscreteChain, target: &T) -> bool {
    let i = chain.rng.random_range(0..target.dim());
    let level = chain.rng.random_range(0..target.levels()) as Level;
    let delta = target.log_prob_delta(&chain.theta, i, level);
    let u: f64 = chain.rng.random();
    chain.proposals += 1;
    if u.ln() < delta {
        chain.theta[i] = level;
        chain.accepted += 1;
        true
    } else {
        false
    }
}

/// Independent grid-space chains sharing one kernel.
#[derive(Debug, Clone)]
pub struct DiscreteChainSet {
    pub chains: Vec<DiscreteChain>,
    pub kernel: DiscreteKernel,
    pub thin: usize,
}

impl DiscreteChainSet {
    /// Chain `i` draws from the stream seeded with `master_seed ^ i`.
    pub fn new<T: DiscreteTarget + ?Sized>(
        target: &T,
        n_chains: usize,
        master_seed: u64,
        kernel: DiscreteKernel,
        thin: usize,
    ) -> Result<Self> {
        if n_chains == 0 || thin == 0 {
            return Err(Error::Config("need at least one chain and a positive thinning".into()));
        }
        if target.dim() == 0 {
            return Err(Error::Dimension("target has no coordinates".into()));
        }
        let chains = (0..n_chains)
            .map(|i| DiscreteChain::new(target, master_seed ^ i as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { chains, kernel, thin })
    }

    /// Advances every chain `steps` times without recording.
    pub fn burn_in<T: DiscreteTarget + ?Sized>(&mut self, target: &T, steps: usize) {
        let kernel = self.kernel;
        self.chains.par_iter_mut().for_each(|c| {
            for _ in 0..steps {
                step(c, target, kernel);
            }
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

    /// Runs every chain for `n_steps`, keeping every `thin`-th state.
    pub fn run<T: DiscreteTarget + ?Sized>(&mut self, target: &T, n_steps: usize) -> DiscreteSamples {
        let start = Instant::now();
        let kernel = self.kernel;
        let thin = self.thin;
        let kept = n_steps / thin;
        let per_chain: Vec<Vec<Level>> = self
            .chains
            .par_iter_mut()
            .map(|c| {
                let mut out = Vec::with_capacity(kept * c.theta.len());
                for s in 0..n_steps {
                    step(c, target, kernel);
                    if (s + 1) % thin == 0 {
                        out.extend_from_slice(&c.theta);
                    }
                }
                out
            })
            .collect();
        DiscreteSamples {
            n_chains: self.chains.len(),
            per_chain: kept,
            dim: target.dim(),
            thin,
            data: per_chain.concat(),
            out_of_domain: 0,
            wall_clock_s: start.elapsed().as_secs_f64(),
        }
    }
}

fn step<T: DiscreteTarget + ?Sized>(chain: &mut DiscreteChain, target: &T, kernel: DiscreteKernel) {
    match kernel {
        DiscreteKernel::Gibbs => gibbs_step(chain, target),
        DiscreteKernel::Mh => {
            discrete_mh_step(chain, target);
        }
    }
}
