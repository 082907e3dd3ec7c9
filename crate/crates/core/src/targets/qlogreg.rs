use super::DiscreteTarget;
use crate::error::{ensure_dim, Error, Result};
use crate::flows::Level;
use crate::numcore::{dot, log_sum_exp, RealMat};

/// Uniform quantization levels `lo + j (hi - lo) / (levels - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantGrid {
    pub levels: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for QuantGrid {
    /// 4 bits over `[-2, 2]`.
    fn default() -> Self {
        Self {
            levels: 16,
            lo: -2.0,
            hi: 2.0,
        }
    }
}

impl QuantGrid {
    pub fn values(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.levels - 1) as f64;
        (0..self.levels).map(|j| self.lo + j as f64 * step).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.levels < 2 || !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Config(format!(
                "quantization grid needs >= 2 increasing levels, got {} over [{}, {}]",
                self.levels, self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Multinomial logistic regression whose weights and biases live on a
/// quantization grid, under a flat prior. Parameters are laid out class by
/// class as `[w_c1 .. w_cF, b_c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLogReg {
    features: RealMat,
    labels: Vec<usize>,
    classes: usize,
    grid: QuantGrid,
    values: Vec<f64>,
}

impl QuantizedLogReg {
    pub fn new(features: RealMat, labels: Vec<usize>, classes: usize, grid: QuantGrid) -> Result<Self> {
        grid.validate()?;
        ensure_dim("labels", features.rows(), labels.len())?;
        if classes < 2 {
            return Err(Error::Config(format!("need at least two classes, got {classes}")));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Domain(format!("label {l} outside 0..{classes}")));
        }
        let values = grid.values();
        Ok(Self {
            features,
            labels,
            classes,
            grid,
            values,
        })
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn grid(&self) -> QuantGrid {
        self.grid
    }

    pub fn dequantize(&self, theta: &[Level]) -> Vec<f64> {
        theta.iter().map(|&t| self.values[t as usize]).collect()
    }

    /// Log-likelihood at real-valued parameters.
    pub fn log_likelihood(&self, params: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut logits = vec![0.0; self.classes];
        for (n, &y) in self.labels.iter().enumerate() {
            self.fill_logits(params, n, &mut logits);
            total += logits[y] - log_sum_exp(&logits);
        }
        total
    }

    /// Fraction of rows whose arg-max class matches the label.
    pub fn accuracy(&self, params: &[f64]) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let mut logits = vec![0.0; self.classes];
        let hits = self
            .labels
            .iter()
            .enumerate()
            .filter(|(n, &y)| {
                self.fill_logits(params, *n, &mut logits);
                let best = (0..self.classes)
                    .max_by(|&a, &b| logits[a].total_cmp(&logits[b]))
                    .unwrap_or(0);
                best == y
            })
            .count();
        hits as f64 / self.labels.len() as f64
    }

    fn fill_logits(&self, params: &[f64], n: usize, logits: &mut [f64]) {
        let f = self.num_features();
        let x = self.features.row(n);
        for (c, l) in logits.iter_mut().enumerate() {
            let block = &params[c * (f + 1)..(c + 1) * (f + 1)];
            *l = dot(&block[..f], x) + block[f];
        }
    }

    /// Log-likelihood of every level of parameter `i`, others fixed.
    fn sweep_parameter(&self, theta: &[Level], i: usize) -> Vec<f64> {
        let f = self.num_features();
        let (c, j) = (i / (f + 1), i % (f + 1));
        let params = self.dequantize(theta);
        let current = params[i];
        let mut out = vec![0.0; self.grid.levels];
        let mut logits = vec![0.0; self.classes];
        for (n, &y) in self.labels.iter().enumerate() {
            self.fill_logits(&params, n, &mut logits);
            let xj = if j == f { 1.0 } else { self.features.get(n, j) };
            let base = logits[c] - current * xj;
            for (slot, &v) in out.iter_mut().zip(&self.values) {
                logits[c] = base + v * xj;
                *slot += logits[y] - log_sum_exp(&logits);
            }
        }
        out
    }
}

impl DiscreteTarget for QuantizedLogReg {
    fn dim(&self) -> usize {
        self.classes * (self.num_features() + 1)
    }

    fn levels(&self) -> usize {
        self.grid.levels
    }

    fn log_prob(&self, theta: &[Level]) -> f64 {
        self.log_likelihood(&self.dequantize(theta))
    }

    fn conditional_log_probs(&self, theta: &[Level], i: usize) -> Vec<f64> {
        self.sweep_parameter(theta, i)
    }
}
