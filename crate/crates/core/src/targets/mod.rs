//! Unnormalized log-mass functions on `{0, ..., K-1}^d`, plus the data
//! ingestion and synthetic generators behind the experiment families.

mod bvs;
mod data;
mod gmm;
mod images;
mod ising;
mod qlogreg;

pub use bvs::{make_synthetic_bvs, BayesVarSelect, BvsPrior, SyntheticBvs};
pub use data::{load_labeled_csv, load_regression_csv, standardize_columns, LabeledData};
pub use gmm::{DiscretizedGmm, GmmComponent};
pub use images::{
    binarize, corrupt, glyph_image, load_idx_images, load_idx_labels, parse_idx_images,
    parse_idx_labels, IdxImages,
};
pub use ising::IsingDenoise;
pub use qlogreg::{QuantGrid, QuantizedLogReg};

use crate::error::{Error, Result};
use crate::flows::Level;

/// An unnormalized probability mass function `pi(theta)` on a finite grid.
///
/// Implementations are immutable and evaluation is pure, so one target can
/// be shared by any number of chains.
pub trait DiscreteTarget: Send + Sync {
    fn dim(&self) -> usize;

    fn levels(&self) -> usize;

    /// `log pi(theta)` up to an additive constant.
    fn log_prob(&self, theta: &[Level]) -> f64;

    /// `log pi(theta') - log pi(theta)` where `theta'` sets coordinate `i` to `level`.
    fn log_prob_delta(&self, theta: &[Level], i: usize, level: Level) -> f64 {
        if theta[i] == level {
            return 0.0;
        }
        let mut next = theta.to_vec();
        next[i] = level;
        self.log_prob(&next) - self.log_prob(theta)
    }

    /// Log-masses of every level of coordinate `i` with the others held at
    /// `theta`, up to a constant shared by all levels.
    fn conditional_log_probs(&self, theta: &[Level], i: usize) -> Vec<f64> {
        let mut probe = theta.to_vec();
        (0..self.levels())
            .map(|k| {
                probe[i] = k as Level;
                self.log_prob(&probe)
            })
            .collect()
    }

    /// Preferred starting point for discrete chains, if the target has one.
    fn initial_state(&self) -> Option<Vec<Level>> {
        None
    }
}

impl<T: DiscreteTarget + ?Sized> DiscreteTarget for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn levels(&self) -> usize {
        (**self).levels()
    }
    fn log_prob(&self, theta: &[Level]) -> f64 {
        (**self).log_prob(theta)
    }
    fn log_prob_delta(&self, theta: &[Level], i: usize, level: Level) -> f64 {
        (**self).log_prob_delta(theta, i, level)
    }
    fn conditional_log_probs(&self, theta: &[Level], i: usize) -> Vec<f64> {
        (**self).conditional_log_probs(theta, i)
    }
    fn initial_state(&self) -> Option<Vec<Level>> {
        (**self).initial_state()
    }
}

/// Constant `log pi = 0` on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformTarget {
    pub dim: usize,
    pub levels: usize,
}

impl DiscreteTarget for UniformTarget {
    fn dim(&self) -> usize {
        self.dim
    }
    fn levels(&self) -> usize {
        self.levels
    }
    fn log_prob(&self, _theta: &[Level]) -> f64 {
        0.0
    }
    fn log_prob_delta(&self, _theta: &[Level], _i: usize, _level: Level) -> f64 {
        0.0
    }
    fn conditional_log_probs(&self, _theta: &[Level], _i: usize) -> Vec<f64> {
        vec![0.0; self.levels]
    }
}

/// Explicit table of log-masses over a small grid, indexed by [`grid_index`].
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedTarget {
    dim: usize,
    levels: usize,
    log_probs: Vec<f64>,
}

impl TabulatedTarget {
    pub fn new(dim: usize, levels: usize, log_probs: Vec<f64>) -> Result<Self> {
        let size = grid_size(dim, levels)
            .ok_or_else(|| Error::Config(format!("grid {levels}^{dim} too large to tabulate")))?;
        if log_probs.len() != size {
            return Err(Error::Dimension(format!(
                "table needs {size} entries, got {}",
                log_probs.len()
            )));
        }
        if let Some(v) = log_probs.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("table entry {v} is not finite")));
        }
        Ok(Self {
            dim,
            levels,
            log_probs,
        })
    }

    /// Builds the table from (not necessarily normalized) probabilities.
    pub fn from_masses(dim: usize, levels: usize, masses: &[f64]) -> Result<Self> {
        Self::new(dim, levels, masses.iter().map(|m| m.ln()).collect())
    }
}

impl DiscreteTarget for TabulatedTarget {
    fn dim(&self) -> usize {
        self.dim
    }
    fn levels(&self) -> usize {
        self.levels
    }
    fn log_prob(&self, theta: &[Level]) -> f64 {
        self.log_probs[grid_index(theta, self.levels)]
    }
}

/// `K^d`, or `None` on overflow.
pub fn grid_size(dim: usize, levels: usize) -> Option<usize> {
    levels.checked_pow(u32::try_from(dim).ok()?)
}

/// Row-major position of `theta` in the enumerated grid (first coordinate
/// most significant).
pub fn grid_index(theta: &[Level], levels: usize) -> usize {
    theta
        .iter()
        .fold(0usize, |acc, &t| acc * levels + t as usize)
}

/// Inverse of [`grid_index`].
pub fn grid_point(mut index: usize, dim: usize, levels: usize) -> Vec<Level> {
    let mut theta = vec![0; dim];
    for slot in theta.iter_mut().rev() {
        *slot = (index % levels) as Level;
        index /= levels;
    }
    theta
}

pub fn in_grid(theta: &[Level], levels: usize) -> bool {
    theta.iter().all(|&t| t >= 0 && (t as usize) < levels)
}

/// `log pi` at every grid point in [`grid_index`] order.
pub fn enumerate_log_probs<T: DiscreteTarget + ?Sized>(
    target: &T,
    max_states: usize,
) -> Result<Vec<f64>> {
    let size = grid_size(target.dim(), target.levels())
        .filter(|&s| s <= max_states)
        .ok_or_else(|| {
            Error::Config(format!(
                "grid {}^{} exceeds the enumeration limit of {max_states} states",
                target.levels(),
                target.dim()
            ))
        })?;
    Ok((0..size)
        .map(|i| target.log_prob(&grid_point(i, target.dim(), target.levels())))
        .collect())
}

/// Normalizes log-masses. Returns the probabilities and `log Z`.
pub fn normalize_log_probs(log_probs: &[f64]) -> (Vec<f64>, f64) {
    let log_z = crate::numcore::log_sum_exp(log_probs);
    (log_probs.iter().map(|l| (l - log_z).exp()).collect(), log_z)
}

/// Exact normalized mass function of an enumerable target.
pub fn exact_pmf<T: DiscreteTarget + ?Sized>(target: &T, max_states: usize) -> Result<Vec<f64>> {
    Ok(normalize_log_probs(&enumerate_log_probs(target, max_states)?).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_index_round_trip() {
        for i in 0..27 {
            let p = grid_point(i, 3, 3);
            assert!(in_grid(&p, 3));
            assert_eq!(grid_index(&p, 3), i);
        }
        assert_eq!(grid_point(5, 3, 2), vec![1, 0, 1]);
    }

    #[test]
    fn grid_size_overflow_is_none() {
        assert_eq!(grid_size(3, 4), Some(64));
        assert_eq!(grid_size(0, 7), Some(1));
        assert_eq!(grid_size(784, 2), None);
    }

    #[test]
    fn default_conditionals_and_deltas() {
        let t = TabulatedTarget::from_masses(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = t.conditional_log_probs(&[1, 0], 1);
        assert!((c[0] - 3f64.ln()).abs() < 1e-15);
        assert!((c[1] - 4f64.ln()).abs() < 1e-15);
        assert!((t.log_prob_delta(&[0, 0], 0, 1) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(t.log_prob_delta(&[0, 1], 1, 1), 0.0);
    }

    #[test]
    fn enumeration_normalizes() {
        let t = TabulatedTarget::from_masses(1, 4, &[1.0, 1.0, 2.0, 4.0]).unwrap();
        let pmf = exact_pmf(&t, 100).unwrap();
        for (p, want) in pmf.iter().zip([0.125, 0.125, 0.25, 0.5]) {
            assert!((p - want).abs() < 1e-15);
        }
        assert!(enumerate_log_probs(&t, 3).is_err());
    }

    #[test]
    fn table_rejects_bad_sizes() {
        assert!(TabulatedTarget::new(2, 2, vec![0.0; 3]).is_err());
        assert!(TabulatedTarget::new(1, 2, vec![0.0, f64::NAN]).is_err());
    }
}
