use super::DiscreteTarget;
use crate::error::{ensure_dim, Error, Result};
use crate::flows::Level;
use crate::numcore::{log_diff_ndtr, log_sum_exp};

/// Box half-width, in standard deviations, every component must fit inside.
const COVER_SIGMAS: f64 = 6.0;

/// One axis-aligned Gaussian component.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A diagonal Gaussian mixture binned onto `2^bits` equal cells per axis of a
/// bounding box. `pi(theta)` is the exact mixture mass of cell `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedGmm {
    dim: usize,
    bits: u32,
    lower: Vec<f64>,
    upper: Vec<f64>,
    components: Vec<GmmComponent>,
    log_weights: Vec<f64>,
    /// `[component][axis][level]` log-mass of the 1-d cell.
    cell_log_mass: Vec<Vec<Vec<f64>>>,
}

impl DiscretizedGmm {
    pub fn new(
        components: Vec<GmmComponent>,
        bits: u32,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let dim = lower.len();
        ensure_dim("box upper corner", dim, upper.len())?;
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if !(1..=20).contains(&bits) {
            return Err(Error::Config(format!("bits must be in 1..=20, got {bits}")));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "weights must be positive and sum to 1 (sum {total})"
            )));
        }
        for (j, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("empty box along axis {j}")));
            }
        }
        for (ci, c) in components.iter().enumerate() {
            ensure_dim("component mean", dim, c.mean.len())?;
            ensure_dim("component scale", dim, c.std.len())?;
            for j in 0..dim {
                let (m, s) = (c.mean[j], c.std[j]);
                if !(s > 0.0) || !m.is_finite() || !s.is_finite() {
                    return Err(Error::Config(format!(
                        "component {ci} has invalid mean {m} / std {s} on axis {j}"
                    )));
                }
                let slack = 1e-9 * (upper[j] - lower[j]);
                if m - COVER_SIGMAS * s < lower[j] - slack || m + COVER_SIGMAS * s > upper[j] + slack {
                    return Err(Error::Config(format!(
                        "box does not cover component {ci} to {COVER_SIGMAS} sigma on axis {j}"
                    )));
                }
            }
        }
        let levels = 1usize << bits;
        let cell_log_mass = components
            .iter()
            .map(|c| {
                (0..dim)
                    .map(|j| {
                        let w = (upper[j] - lower[j]) / levels as f64;
                        (0..levels)
                            .map(|k| {
                                let a = lower[j] + k as f64 * w;
                                let b = if k + 1 == levels { upper[j] } else { a + w };
                                log_diff_ndtr((a - c.mean[j]) / c.std[j], (b - c.mean[j]) / c.std[j])
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let log_weights = components.iter().map(|c| c.weight.ln()).collect();
        Ok(Self {
            dim,
            bits,
            lower,
            upper,
            components,
            log_weights,
            cell_log_mass,
        })
    }

    /// Smallest box covering every component to six standard deviations.
    pub fn covering(components: Vec<GmmComponent>, bits: u32) -> Result<Self> {
        let dim = components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::Config("mixture needs at least one component".into()))?;
        let mut lower = vec![f64::INFINITY; dim];
        let mut upper = vec![f64::NEG_INFINITY; dim];
        for c in &components {
            ensure_dim("component mean", dim, c.mean.len())?;
            ensure_dim("component scale", dim, c.std.len())?;
            for j in 0..dim {
                lower[j] = lower[j].min(c.mean[j] - COVER_SIGMAS * c.std[j]);
                upper[j] = upper[j].max(c.mean[j] + COVER_SIGMAS * c.std[j]);
            }
        }
        Self::new(components, bits, lower, upper)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// `[lo, hi)` bounds of cell `theta` along each axis.
    pub fn cell_bounds(&self, theta: &[Level]) -> Vec<(f64, f64)> {
        let k = self.levels() as f64;
        theta
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                let w = (self.upper[j] - self.lower[j]) / k;
                (self.lower[j] + t as f64 * w, self.lower[j] + (t as f64 + 1.0) * w)
            })
            .collect()
    }

    /// Log of the mixture mass falling inside the bounding box.
    pub fn box_log_mass(&self) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| {
                lw + (0..self.dim)
                    .map(|j| {
                        log_diff_ndtr(
                            (self.lower[j] - c.mean[j]) / c.std[j],
                            (self.upper[j] - c.mean[j]) / c.std[j],
                        )
                    })
                    .sum::<f64>()
            })
            .collect();
        log_sum_exp(&terms)
    }
}

impl DiscreteTarget for DiscretizedGmm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn levels(&self) -> usize {
        1 << self.bits
    }

    fn log_prob(&self, theta: &[Level]) -> f64 {
        let terms: Vec<f64> = self
            .cell_log_mass
            .iter()
            .zip(&self.log_weights)
            .map(|(axes, lw)| {
                lw + axes
                    .iter()
                    .zip(theta)
                    .map(|(cells, &t)| cells[t as usize])
                    .sum::<f64>()
            })
            .collect();
        log_sum_exp(&terms)
    }
}
