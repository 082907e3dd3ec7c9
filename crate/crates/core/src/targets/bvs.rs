use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::DiscreteTarget;
use crate::error::{ensure_dim, Error, Result};
use crate::flows::Level;
use crate::numcore::{dot, RealMat};

/// Ridge added to every selected Gram matrix before solving.
const GRAM_JITTER: f64 = 1e-8;

/// Conjugate prior hyperparameters: `beta | sigma^2 ~ N(0, nu^2 sigma^2 (X'X)^-1)`
/// and `sigma^2 ~ InvGamma(alpha / 2, alpha w / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BvsPrior {
    pub nu: f64,
    pub w: f64,
    pub alpha: f64,
}

impl Default for BvsPrior {
    fn default() -> Self {
        Self {
            nu: 10.0,
            w: 1.0,
            alpha: 1.0,
        }
    }
}

/// Posterior over inclusion vectors `theta in {0,1}^k` for linear regression
/// with the coefficients and noise variance integrated out.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesVarSelect {
    x: RealMat,
    y: Vec<f64>,
    prior: BvsPrior,
    gram: RealMat,
    xty: Vec<f64>,
    yty: f64,
}

impl BayesVarSelect {
    pub fn new(x: RealMat, y: Vec<f64>, prior: BvsPrior) -> Result<Self> {
        ensure_dim("response", x.rows(), y.len())?;
        if x.rows() == 0 {
            return Err(Error::Config("variable selection needs at least one observation".into()));
        }
        crate::error::ensure_finite("response", &y)?;
        if !(prior.nu > 0.0 && prior.w > 0.0 && prior.alpha > 0.0) {
            return Err(Error::Config(format!("prior hyperparameters must be positive, got {prior:?}")));
        }
        let k = x.cols();
        let cols: Vec<Vec<f64>> = (0..k).map(|j| x.column(j)).collect();
        let mut gram = RealMat::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = dot(&cols[a], &cols[b]);
                gram.set(a, b, v);
                gram.set(b, a, v);
            }
        }
        let xty = cols.iter().map(|c| dot(c, &y)).collect();
        let yty = dot(&y, &y);
        Ok(Self {
            x,
            y,
            prior,
            gram,
            xty,
            yty,
        })
    }

    pub fn design(&self) -> &RealMat {
        &self.x
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    pub fn prior(&self) -> BvsPrior {
        self.prior
    }

    pub fn observations(&self) -> usize {
        self.y.len()
    }

    /// Closed-form log marginal likelihood of inclusion vector `theta`, up
    /// to a constant shared by all `theta`.
    pub fn try_log_prob(&self, theta: &[Level]) -> Result<f64> {
        ensure_dim("inclusion vector", self.x.cols(), theta.len())?;
        let sel: Vec<usize> = theta
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != 0)
            .map(|(j, _)| j)
            .collect();
        let BvsPrior { nu, w, alpha } = self.prior;
        let nu2 = nu * nu;
        let n = self.y.len() as f64;
        let mut s = self.yty;
        if !sel.is_empty() {
            let m = sel.len();
            let g = DMatrix::from_fn(m, m, |a, b| {
                self.gram.get(sel[a], sel[b]) + if a == b { GRAM_JITTER } else { 0.0 }
            });
            let b = DVector::from_iterator(m, sel.iter().map(|&j| self.xty[j]));
            let chol = g.cholesky().ok_or_else(|| {
                Error::Numeric(format!("selected Gram matrix for {m} columns is singular"))
            })?;
            let sol = chol.solve(&b);
            s -= nu2 / (1.0 + nu2) * b.dot(&sol);
        }
        let value = -(sel.len() as f64) / 2.0 * (1.0 + nu2).ln() - (n + alpha) / 2.0 * (alpha * w + s).ln();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite marginal likelihood {value}")));
        }
        Ok(value)
    }
}

impl DiscreteTarget for BayesVarSelect {
    fn dim(&self) -> usize {
        self.x.cols()
    }

    fn levels(&self) -> usize {
        2
    }

    /// `-inf` if the selected Gram matrix cannot be factored.
    fn log_prob(&self, theta: &[Level]) -> f64 {
        self.try_log_prob(theta).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Generated variable-selection problem together with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticBvs {
    pub model: BayesVarSelect,
    pub support: Vec<usize>,
    pub beta: Vec<f64>,
    pub seed: u64,
    pub noise_sigma: f64,
}

#[derive(Serialize)]
struct SyntheticMeta<'a> {
    seed: u64,
    observations: usize,
    features: usize,
    noise_sigma: f64,
    support: &'a [usize],
    beta: &'a [f64],
    prior: BvsPrior,
}

/// Gaussian design with `k_informative` active coefficients on a random
/// support; active magnitudes are uniform on `[1, 2]` with random signs.
pub fn make_synthetic_bvs(
    d: usize,
    k_informative: usize,
    n: usize,
    noise_sigma: f64,
    seed: u64,
    prior: BvsPrior,
) -> Result<SyntheticBvs> {
    if k_informative > d {
        return Err(Error::Config(format!(
            "{k_informative} informative features requested out of {d}"
        )));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::Config(format!("noise scale must be non-negative, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let x = RealMat::from_vec(n, d, data)?;
    let mut support = sample(&mut rng, d, k_informative).into_vec();
    support.sort_unstable();
    let mut beta = vec![0.0; d];
    for &j in &support {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        beta[j] = sign * rng.random_range(1.0..2.0);
    }
    let y = (0..n)
        .map(|r| dot(x.row(r), &beta) + noise_sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(SyntheticBvs {
        model: BayesVarSelect::new(x, y, prior)?,
        support,
        beta,
        seed,
        noise_sigma,
    })
}

impl SyntheticBvs {
    /// Writes the data as CSV (`x0, ..., x{k-1}, y`) and the generation
    /// metadata as a JSON sidecar next to it.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        let x = self.model.design();
        let mut w = csv::Writer::from_path(csv_path)?;
        let mut header: Vec<String> = (0..x.cols()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for r in 0..x.rows() {
            let mut row: Vec<String> = x.row(r).iter().map(|v| v.to_string()).collect();
            row.push(self.model.response()[r].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        let meta = SyntheticMeta {
            seed: self.seed,
            observations: x.rows(),
            features: x.cols(),
            noise_sigma: self.noise_sigma,
            support: &self.support,
            beta: &self.beta,
            prior: self.model.prior(),
        };
        let mut side = BufWriter::new(File::create(csv_path.with_extension("json"))?);
        serde_json::to_writer_pretty(&mut side, &meta)
            .map_err(|e| Error::Format(format!("metadata serialization failed: {e}")))?;
        side.flush()?;
        Ok(())
    }
}
