use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Shortest series accepted by the estimator.
pub const MIN_SERIES_LEN: usize = 10;

/// Effective sample size of one (possibly multi-chain) series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ess {
    pub value: f64,
    /// The series had zero variance; `value` is then the sample count.
    pub degenerate: bool,
}

/// Geyer's initial monotone sequence estimate for a single series.
pub fn ess_1d(series: &[f64]) -> Result<Ess> {
    ess_chains(&[series])
}

/// ESS of several equally long chains of one scalar. Chains are centred on
/// their pooled mean and their autocovariances averaged, so lags never span
/// two chains.
pub fn ess_chains(chains: &[&[f64]]) -> Result<Ess> {
    let n = chains.first().map_or(0, |c| c.len());
    if chains.is_empty() || chains.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension("chains must be non-empty and of equal length".into()));
    }
    let total = n * chains.len();
    if total < MIN_SERIES_LEN {
        return Err(Error::Config(format!(
            "ESS needs at least {MIN_SERIES_LEN} samples, got {total}"
        )));
    }
    if let Some(v) = chains.iter().flat_map(|c| c.iter()).find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("series value {v} is not finite")));
    }
    let mean = chains.iter().flat_map(|c| c.iter()).sum::<f64>() / total as f64;
    let mut acov = vec![0.0; n];
    let mut planner = FftPlanner::new();
    let m = (2 * n).next_power_of_two();
    let fft = planner.plan_fft_forward(m);
    let ifft = planner.plan_fft_inverse(m);
    for c in chains {
        let mut buf: Vec<Complex<f64>> = c
            .iter()
            .map(|v| Complex::new(v - mean, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(m)
            .collect();
        fft.process(&mut buf);
        for b in &mut buf {
            *b = Complex::new(b.norm_sqr(), 0.0);
        }
        ifft.process(&mut buf);
        for (a, b) in acov.iter_mut().zip(&buf) {
            *a += b.re / m as f64;
        }
    }
    let gamma0 = acov[0];
    let scale = chains.iter().flat_map(|c| c.iter()).map(|v| v.abs()).fold(mean.abs(), f64::max);
    if gamma0 <= (1e-12 * scale).powi(2) * total as f64 {
        return Ok(Ess {
            value: total as f64,
            degenerate: true,
        });
    }
    let rho: Vec<f64> = acov.iter().map(|g| g / gamma0).collect();
    let tau = geyer_tau(&rho);
    Ok(Ess {
        value: (total as f64 / tau).clamp(f64::MIN_POSITIVE, total as f64),
        degenerate: false,
    })
}

/// Integrated autocorrelation time `-1 + 2 sum_k Gamma_k` over the initial
/// positive, monotonically non-increasing run of paired sums
/// `Gamma_k = rho_{2k} + rho_{2k+1}`.
fn geyer_tau(rho: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < rho.len() {
        let pair = rho[2 * k] + rho[2 * k + 1];
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    (-1.0 + 2.0 * sum).max(f64::MIN_POSITIVE)
}
