//! Effective sample size, grouped ESS reporting, log-probability summaries
//! and distances between mass functions.

mod ess;

pub use ess::{ess_1d, ess_chains, Ess, MIN_SERIES_LEN};

use std::fs::OpenOptions;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::Level;
use crate::samplers::DiscreteSamples;
use crate::targets::{grid_index, grid_size, in_grid, DiscreteTarget};

/// Chains pooled into one ESS estimate.
pub const DEFAULT_GROUP_SIZE: usize = 16;

/// ESS is reported per this many kept samples.
pub const ESS_PER: f64 = 1e4;

/// Per-group ESS, averaged over dimensions and normalized per 10^4 samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedEss {
    pub groups: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    pub samples_per_group: usize,
    /// Dimension-group pairs whose series never moved.
    pub degenerate: usize,
}

/// Grouped ESS of the grid coordinates of `samples`.
pub fn grouped_ess(samples: &DiscreteSamples, group_size: usize) -> Result<GroupedEss> {
    grouped_ess_by(samples.n_chains, samples.per_chain, samples.dim, group_size, |c, k, i| {
        f64::from(samples.sample(c, k)[i])
    })
}

/// Grouped ESS over an arbitrary `value(chain, sample, dim)` accessor.
pub fn grouped_ess_by<F>(
    n_chains: usize,
    per_chain: usize,
    dim: usize,
    group_size: usize,
    value: F,
) -> Result<GroupedEss>
where
    F: Fn(usize, usize, usize) -> f64 + Sync,
{
    if group_size == 0 || n_chains == 0 || n_chains % group_size != 0 {
        return Err(Error::Config(format!(
            "{n_chains} chains cannot be split into groups of {group_size}"
        )));
    }
    if dim == 0 {
        return Err(Error::Dimension("samples have no coordinates".into()));
    }
    let n_groups = n_chains / group_size;
    let per_group = group_size * per_chain;
    let cells: Vec<(usize, usize)> = (0..n_groups)
        .flat_map(|g| (0..dim).map(move |i| (g, i)))
        .collect();
    let ess = cells
        .par_iter()
        .map(|&(g, i)| {
            let series: Vec<Vec<f64>> = (g * group_size..(g + 1) * group_size)
                .map(|c| (0..per_chain).map(|k| value(c, k, i)).collect())
                .collect();
            let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
            ess_chains(&refs)
        })
        .collect::<Result<Vec<_>>>()?;
    let degenerate = ess.iter().filter(|e| e.degenerate).count();
    let groups: Vec<f64> = ess
        .chunks(dim)
        .map(|g| g.iter().map(|e| e.value).sum::<f64>() / dim as f64 * ESS_PER / per_group as f64)
        .collect();
    let (mean, stderr) = mean_stderr(&groups);
    Ok(GroupedEss {
        groups,
        mean,
        stderr,
        samples_per_group: per_group,
        degenerate,
    })
}

/// Mean and standard error of the mean; the error is zero for fewer than two values.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Total ESS across all kept samples per wall-clock minute. Training time
/// counts for flow-based samplers and is zero for baselines.
pub fn ess_per_minute(ess_per_1e4: f64, total_samples: usize, sampling_s: f64, training_s: f64) -> Result<f64> {
    let secs = sampling_s + training_s;
    if !(secs > 0.0) || sampling_s < 0.0 || training_s < 0.0 {
        return Err(Error::Config(format!(
            "timings must be non-negative with a positive total, got {sampling_s} and {training_s}"
        )));
    }
    Ok(ess_per_1e4 * total_samples as f64 / ESS_PER / (secs / 60.0))
}

/// Mean of `log pi` over all kept samples. The standard error treats each
/// chain's average as one observation, so autocorrelation within a chain is
/// accounted for; a single chain falls back to the naive error.
pub fn mean_logprob<T: DiscreteTarget + ?Sized>(samples: &DiscreteSamples, target: &T) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Config("no samples to summarize".into()));
    }
    Ok(summarize_logprob(&samples.log_probs(target), samples.n_chains))
}

/// [`mean_logprob`] for precomputed values laid out chain by chain.
pub fn summarize_logprob(values: &[f64], n_chains: usize) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if n_chains < 2 {
        return (mean, mean_stderr(values).1);
    }
    let per = values.len() / n_chains;
    let chain_means: Vec<f64> = values
        .chunks_exact(per)
        .map(|c| c.iter().sum::<f64>() / per as f64)
        .collect();
    (mean, mean_stderr(&chain_means).1)
}

/// Empirical mass function of the samples over the enumerated grid.
pub fn empirical_pmf(rows: impl IntoIterator<Item = impl AsRef<[Level]>>, dim: usize, levels: usize, max_states: usize) -> Result<Vec<f64>> {
    let size = grid_size(dim, levels)
        .filter(|&s| s <= max_states)
        .ok_or_else(|| Error::Config(format!("grid {levels}^{dim} too large to histogram")))?;
    let mut counts = vec![0u64; size];
    let mut n = 0u64;
    for r in rows {
        let r = r.as_ref();
        if r.len() != dim || !in_grid(r, levels) {
            return Err(Error::Domain(format!("sample {r:?} is not on the grid")));
        }
        counts[grid_index(r, levels)] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Config("no samples to histogram".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / n as f64).collect())
}

/// Half the L1 distance between two mass functions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "mass functions of size {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sampler: String,
    pub target: String,
    pub ess_mean: f64,
    pub ess_stderr: f64,
    pub ess_per_min: f64,
    pub logpi_mean: f64,
    pub logpi_stderr: f64,
    pub wall_clock_s: f64,
}

/// Full summary of one sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub sampler: String,
    pub target: String,
    pub ess: GroupedEss,
    pub ess_per_min: f64,
    pub logpi_mean: f64,
    pub logpi_stderr: f64,
    pub total_samples: usize,
    pub sampling_s: f64,
    pub training_s: f64,
}

impl EssReport {
    /// Builds the report for `samples`. `training_s` is zero for baselines.
    pub fn build<T: DiscreteTarget + ?Sized>(
        sampler: &str,
        target_name: &str,
        samples: &DiscreteSamples,
        target: &T,
        group_size: usize,
        sampling_s: f64,
        training_s: f64,
    ) -> Result<Self> {
        let ess = grouped_ess(samples, group_size)?;
        let (logpi_mean, logpi_stderr) = mean_logprob(samples, target)?;
        let ess_per_min = ess_per_minute(ess.mean, samples.len(), sampling_s, training_s)?;
        Ok(Self {
            sampler: sampler.to_string(),
            target: target_name.to_string(),
            ess,
            ess_per_min,
            logpi_mean,
            logpi_stderr,
            total_samples: samples.len(),
            sampling_s,
            training_s,
        })
    }

    pub fn row(&self) -> ResultRow {
        ResultRow {
            sampler: self.sampler.clone(),
            target: self.target.clone(),
            ess_mean: self.ess.mean,
            ess_stderr: self.ess.stderr,
            ess_per_min: self.ess_per_min,
            logpi_mean: self.logpi_mean,
            logpi_stderr: self.logpi_stderr,
            wall_clock_s: self.sampling_s + self.training_s,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Appends rows to a results table, writing the header if the file is new or empty.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}
