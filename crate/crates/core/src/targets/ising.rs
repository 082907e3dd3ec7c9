use super::DiscreteTarget;
use crate::error::{ensure_dim, Error, Result};
use crate::flows::Level;

/// Ising posterior for binary image denoising on an `h x w` 4-neighbour
/// lattice: `log pi(theta) = beta sum_<ij> s_i s_j + eta sum_i s_i x_i` with
/// spins `s = 2 theta - 1` and the observed image `x` in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingDenoise {
    height: usize,
    width: usize,
    beta: f64,
    eta: f64,
    observed: Vec<f64>,
}

impl IsingDenoise {
    pub fn new(height: usize, width: usize, beta: f64, eta: f64, observed: Vec<i8>) -> Result<Self> {
        ensure_dim("observed image", height * width, observed.len())?;
        if !(beta >= 0.0 && beta.is_finite() && eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!(
                "coupling and field strength must be finite and non-negative, got {beta}, {eta}"
            )));
        }
        if let Some(v) = observed.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::Domain(format!("observed spin {v} not in {{-1, +1}}")));
        }
        Ok(Self {
            height,
            width,
            beta,
            eta,
            observed: observed.into_iter().map(f64::from).collect(),
        })
    }

    /// Observed image given as `{0, 1}` pixels.
    pub fn from_binary(height: usize, width: usize, beta: f64, eta: f64, pixels: &[Level]) -> Result<Self> {
        if let Some(p) = pixels.iter().find(|&&p| p != 0 && p != 1) {
            return Err(Error::Domain(format!("pixel {p} not in {{0, 1}}")));
        }
        let spins = pixels.iter().map(|&p| (2 * p - 1) as i8).collect();
        Self::new(height, width, beta, eta, spins)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// The observed image as `{0, 1}` pixels.
    pub fn observed_pixels(&self) -> Vec<Level> {
        self.observed.iter().map(|&x| (x > 0.0) as Level).collect()
    }

    #[inline]
    fn spin(t: Level) -> f64 {
        (2 * t - 1) as f64
    }

    /// `beta * (sum of neighbour spins) + eta * x_i`.
    fn local_field(&self, theta: &[Level], i: usize) -> f64 {
        let (r, c) = (i / self.width, i % self.width);
        let mut nb = 0.0;
        if r > 0 {
            nb += Self::spin(theta[i - self.width]);
        }
        if r + 1 < self.height {
            nb += Self::spin(theta[i + self.width]);
        }
        if c > 0 {
            nb += Self::spin(theta[i - 1]);
        }
        if c + 1 < self.width {
            nb += Self::spin(theta[i + 1]);
        }
        self.beta * nb + self.eta * self.observed[i]
    }
}

impl DiscreteTarget for IsingDenoise {
    fn dim(&self) -> usize {
        self.height * self.width
    }

    fn levels(&self) -> usize {
        2
    }

    fn log_prob(&self, theta: &[Level]) -> f64 {
        let (h, w) = (self.height, self.width);
        let mut pair = 0.0;
        let mut site = 0.0;
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let s = Self::spin(theta[i]);
                if c + 1 < w {
                    pair += s * Self::spin(theta[i + 1]);
                }
                if r + 1 < h {
                    pair += s * Self::spin(theta[i + w]);
                }
                site += s * self.observed[i];
            }
        }
        self.beta * pair + self.eta * site
    }

    fn log_prob_delta(&self, theta: &[Level], i: usize, level: Level) -> f64 {
        if theta[i] == level {
            return 0.0;
        }
        (Self::spin(level) - Self::spin(theta[i])) * self.local_field(theta, i)
    }

    fn conditional_log_probs(&self, theta: &[Level], i: usize) -> Vec<f64> {
        let f = self.local_field(theta, i);
        vec![-f, f]
    }

    fn initial_state(&self) -> Option<Vec<Level>> {
        Some(self.observed_pixels())
    }
}
