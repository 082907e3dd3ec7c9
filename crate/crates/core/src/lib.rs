//! Flow-augmented MCMC for unnormalized distributions on finite grids.
//!
//! A discrete target `pi(theta)` on `{0, ..., K-1}^d` is lifted to a continuous
//! density by pairing it with a learned dequantizer `q_lambda(u | theta)` on the
//! unit box. A second flow `T_phi` maps a Gaussian latent onto that embedding.
//! Both are fit jointly by maximising a Monte Carlo lower bound, after which
//! random-walk Metropolis or HMC runs in the latent space and every state is
//! rounded back onto the grid.

pub mod diagnostics;
pub mod error;
pub mod flows;
pub mod numcore;
pub mod samplers;
pub mod targets;
pub mod train;

pub use error::{Error, Result};
