//! The subcommands, as library functions writing into the run directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use discflow::diagnostics::{
    append_results, empirical_pmf, grouped_ess_by, mean_logprob, read_results, total_variation,
    ess_per_minute, EssReport, ResultRow,
};
use discflow::flows::FlowModel;
use discflow::samplers::{
    push_samples, run_chains, ChainSet, DiscreteChainSet, DiscreteKernel, DiscreteSamples,
    LatentSamples,
};
use discflow::targets::{exact_pmf, DiscreteTarget};
use discflow::train::{fit_with_checkpoints, LatentDensity};
use discflow::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{EssSpace, ExperimentConfig, KernelKind, SeedStream};
use crate::pgm::Pgm;
use crate::problem::Problem;

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRACE: &str = "trace.csv";
pub const RESULTS: &str = "results.csv";
pub const TRAIN_META: &str = "train.json";

/// Largest grid the GMM evaluation will enumerate.
const MAX_EVAL_STATES: usize = 1 << 20;

/// Wall-clock breakdown of a command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub training_s: f64,
    pub adapt_s: f64,
    pub burn_in_s: f64,
    pub sampling_s: f64,
}

/// Provenance written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub stream_seed: u64,
    pub version: String,
    pub timings: Timings,
    pub details: serde_json::Value,
}

impl RunMeta {
    fn new(command: &str, cfg: &ExperimentConfig, stream: SeedStream, timings: Timings, details: serde_json::Value) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            name: cfg.name.clone(),
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            stream_seed: cfg.derived_seed(stream),
            version: version(),
            timings,
            details,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("JSON serialization: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Prepares the run directory and records the effective configuration.
fn open_run(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn build_model(cfg: &ExperimentConfig, problem: &Problem) -> Result<FlowModel> {
    let t = problem.target();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.derived_seed(SeedStream::Init));
    FlowModel::new(
        t.dim(),
        t.levels(),
        &cfg.flow.phi_arch(),
        &cfg.flow.lambda_arch(),
        cfg.flow.squash,
        &mut rng,
    )
}

/// Summary of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub final_objective: Option<f64>,
    pub final_ood_rate: Option<f64>,
    pub num_params: usize,
    pub training_s: f64,
}

/// Fits both flows and writes the checkpoint, trace and metadata.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let problem = Problem::build(&cfg.target)?;
    open_run(cfg)?;
    problem.dump_dataset(&cfg.out)?;
    let mut model = build_model(cfg, &problem)?;
    let ckpt = cfg.out.join(CHECKPOINT);
    let start = Instant::now();
    let trace = fit_with_checkpoints(&mut model, problem.target(), &cfg.train_config(), |_, m| m.save(&ckpt))?;
    let training_s = start.elapsed().as_secs_f64();
    model.save(&ckpt)?;
    trace.write_csv(&cfg.out.join(TRACE))?;
    let last = trace.rows.last();
    let summary = TrainSummary {
        iterations: trace.len(),
        final_objective: last.map(|r| r.objective),
        final_ood_rate: last.map(|r| r.ood_rate),
        num_params: model.num_params(),
        training_s,
    };
    let timings = Timings {
        training_s,
        ..Timings::default()
    };
    let details = serde_json::to_value(&summary).unwrap_or_default();
    RunMeta::new("train", cfg, SeedStream::Train, timings, details)?.write(&cfg.out.join(TRAIN_META))?;
    Ok(summary)
}

/// Outcome of a sampling command.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub report: EssReport,
    pub samples: DiscreteSamples,
    pub samples_path: PathBuf,
    pub acceptance: f64,
    pub step_size: f64,
}

fn sampler_label(kind: KernelKind) -> &'static str {
    match kind {
        KernelKind::Mh => "flow-mh",
        KernelKind::Hmc => "flow-hmc",
    }
}

fn write_samples(cfg: &ExperimentConfig, label: &str, samples: &DiscreteSamples, csv: bool) -> Result<PathBuf> {
    let path = cfg.out.join(format!("samples-{label}.bin"));
    samples.write_binary(&path)?;
    if csv {
        samples.write_csv(&cfg.out.join(format!("samples-{label}.csv")))?;
    }
    Ok(path)
}

fn finish_report(cfg: &ExperimentConfig, label: &str, report: &EssReport) -> Result<()> {
    report.write_json(&cfg.out.join(format!("report-{label}.json")))?;
    append_results(&cfg.out.join(RESULTS), &[report.row()])
}

/// Runs latent chains through a trained checkpoint and pushes them to the grid.
pub fn cmd_sample(cfg: &ExperimentConfig, checkpoint: Option<&Path>, csv: bool) -> Result<SampleOutcome> {
    cfg.validate()?;
    let problem = Problem::build(&cfg.target)?;
    let default_ckpt = cfg.out.join(CHECKPOINT);
    let ckpt = checkpoint.unwrap_or(&default_ckpt);
    let model = FlowModel::load(ckpt)?;
    let target = problem.target();
    let density = LatentDensity::new(&model, target)?;
    open_run(cfg)?;
    let train_meta = ckpt.with_file_name(TRAIN_META);
    let training_s = if train_meta.exists() {
        RunMeta::read(&train_meta)?.timings.training_s
    } else {
        0.0
    };
    let s = &cfg.sampler;
    let seed = cfg.derived_seed(SeedStream::Sampler);
    let mut set = ChainSet::new(&density, s.chains, seed, s.latent_kernel(), s.thin)?;
    let t0 = Instant::now();
    if s.adapt_steps > 0 {
        set.adapt(&density, s.adapt_steps, s.target_accept);
    }
    let adapt_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    set.burn_in(&density, s.flow_burn_in);
    let burn_in_s = t1.elapsed().as_secs_f64();
    let latent = run_chains(&mut set, &density, s.steps);
    let samples = push_samples(&model, &latent)?;
    let sampling_s = adapt_s + burn_in_s + latent.wall_clock_s;
    let label = sampler_label(s.kernel);
    let report = match s.ess_space {
        EssSpace::Theta => EssReport::build(label, &cfg.name, &samples, target, s.group_size, sampling_s, training_s)?,
        EssSpace::Latent => latent_report(label, &cfg.name, &latent, &samples, target, s.group_size, sampling_s, training_s)?,
    };
    let samples_path = write_samples(cfg, label, &samples, csv)?;
    finish_report(cfg, label, &report)?;
    let timings = Timings {
        training_s,
        adapt_s,
        burn_in_s,
        sampling_s: latent.wall_clock_s,
    };
    let details = serde_json::json!({
        "sampler": label,
        "chains": s.chains,
        "steps": s.steps,
        "thin": s.thin,
        "flow_burn_in": s.flow_burn_in,
        "step_size": set.step_size(),
        "acceptance": set.acceptance_rate(),
        "out_of_domain": samples.out_of_domain,
        "rejected_nonfinite": set.chains.iter().map(|c| c.rejected_nonfinite).sum::<u64>(),
    });
    RunMeta::new("sample", cfg, SeedStream::Sampler, timings, details)?
        .write(&cfg.out.join(format!("sample-{label}.json")))?;
    Ok(SampleOutcome {
        report,
        samples,
        samples_path,
        acceptance: set.acceptance_rate(),
        step_size: set.step_size(),
    })
}

#[allow(clippy::too_many_arguments)]
fn latent_report(
    label: &str,
    name: &str,
    latent: &LatentSamples,
    samples: &DiscreteSamples,
    target: &dyn DiscreteTarget,
    group_size: usize,
    sampling_s: f64,
    training_s: f64,
) -> Result<EssReport> {
    let ess = grouped_ess_by(latent.n_chains, latent.per_chain, latent.dim, group_size, |c, k, i| {
        latent.sample(c, k)[i]
    })?;
    let (logpi_mean, logpi_stderr) = mean_logprob(samples, target)?;
    Ok(EssReport {
        sampler: label.into(),
        target: name.into(),
        ess_per_min: ess_per_minute(ess.mean, samples.len(), sampling_s, training_s)?,
        ess,
        logpi_mean,
        logpi_stderr,
        total_samples: samples.len(),
        sampling_s,
        training_s,
    })
}

/// Coordinate-wise baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Gibbs,
    DiscreteMh,
}

impl Baseline {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gibbs" => Ok(Self::Gibbs),
            "discrete-mh" => Ok(Self::DiscreteMh),
            other => Err(Error::Config(format!(
                "unknown baseline `{other}`; expected gibbs or discrete-mh"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Gibbs => "gibbs",
            Self::DiscreteMh => "discrete-mh",
        }
    }

    fn kernel(self) -> DiscreteKernel {
        match self {
            Self::Gibbs => DiscreteKernel::Gibbs,
            Self::DiscreteMh => DiscreteKernel::Mh,
        }
    }
}

/// Burns in and runs a baseline sampler directly on the grid.
pub fn cmd_baseline(cfg: &ExperimentConfig, which: Baseline, csv: bool) -> Result<SampleOutcome> {
    cfg.validate()?;
    let problem = Problem::build(&cfg.target)?;
    open_run(cfg)?;
    problem.dump_dataset(&cfg.out)?;
    let target = problem.target();
    let s = &cfg.sampler;
    let seed = cfg.derived_seed(SeedStream::Baseline);
    let mut set = DiscreteChainSet::new(target, s.chains, seed, which.kernel(), s.thin)?;
    let t0 = Instant::now();
    set.burn_in(target, s.burn_in);
    let burn_in_s = t0.elapsed().as_secs_f64();
    let samples = set.run(target, s.steps);
    let sampling_s = burn_in_s + samples.wall_clock_s;
    let label = which.label();
    let report = EssReport::build(label, &cfg.name, &samples, target, s.group_size, sampling_s, 0.0)?;
    let samples_path = write_samples(cfg, label, &samples, csv)?;
    finish_report(cfg, label, &report)?;
    let timings = Timings {
        burn_in_s,
        sampling_s: samples.wall_clock_s,
        ..Timings::default()
    };
    let details = serde_json::json!({
        "sampler": label,
        "chains": s.chains,
        "steps": s.steps,
        "thin": s.thin,
        "burn_in": s.burn_in,
        "acceptance": set.acceptance_rate(),
    });
    RunMeta::new("baseline", cfg, SeedStream::Baseline, timings, details)?
        .write(&cfg.out.join(format!("baseline-{label}.json")))?;
    Ok(SampleOutcome {
        report,
        samples,
        samples_path,
        acceptance: set.acceptance_rate(),
        step_size: 0.0,
    })
}

fn collect_results(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_results(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == RESULTS) {
            found.push(p);
        }
    }
    Ok(())
}

/// Merges every results table under `dir` into one row per (sampler,
/// target), keeping the most recent row, sorted by target then sampler.
/// Writes `comparison.csv` and `comparison.json` into `out`.
pub fn cmd_compare(dir: &Path, out: &Path) -> Result<Vec<ResultRow>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    collect_results(dir, &mut files)?;
    let mut rows: Vec<ResultRow> = Vec::new();
    for f in files {
        for r in read_results(&f)? {
            rows.retain(|o| (o.sampler.as_str(), o.target.as_str()) != (r.sampler.as_str(), r.target.as_str()));
            rows.push(r);
        }
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("no results rows under {}", dir.display())));
    }
    rows.sort_by(|a, b| (&a.target, &a.sampler).cmp(&(&b.target, &b.sampler)));
    std::fs::create_dir_all(out)?;
    let csv_path = out.join("comparison.csv");
    if csv_path.exists() {
        std::fs::remove_file(&csv_path)?;
    }
    append_results(&csv_path, &rows)?;
    write_json(&out.join("comparison.json"), &rows)?;
    Ok(rows)
}

/// Writes truth, corrupted and the last kept state of up to `max_chains`
/// chains as PGM files, plus a grid of all of them.
pub fn cmd_render_ising(cfg: &ExperimentConfig, samples: &Path, out: &Path, max_chains: usize) -> Result<Vec<PathBuf>> {
    let problem = Problem::build(&cfg.target)?;
    let Problem::Ising { model, truth, corrupted } = &problem else {
        return Err(Error::Config("render-ising needs an ising target".into()));
    };
    let (h, w) = (model.height(), model.width());
    let s = DiscreteSamples::read_binary(samples)?;
    if s.dim != h * w {
        return Err(Error::Dimension(format!(
            "samples have {} coordinates, lattice is {h}x{w}",
            s.dim
        )));
    }
    if s.per_chain == 0 {
        return Err(Error::Config("sample file holds no states".into()));
    }
    std::fs::create_dir_all(out)?;
    let mut tiles = vec![Pgm::from_levels(h, w, truth)?, Pgm::from_levels(h, w, corrupted)?];
    let mut paths = vec![out.join("truth.pgm"), out.join("corrupted.pgm")];
    for c in 0..s.n_chains.min(max_chains) {
        tiles.push(Pgm::from_levels(h, w, s.sample(c, s.per_chain - 1))?);
        paths.push(out.join(format!("chain-{c:03}.pgm")));
    }
    for (t, p) in tiles.iter().zip(&paths) {
        t.write(p)?;
    }
    let grid = out.join("grid.pgm");
    Pgm::grid(&tiles, 6)?.write(&grid)?;
    paths.push(grid);
    Ok(paths)
}

/// Distances between sample histograms and the enumerated target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmEval {
    pub tv: f64,
    pub samples: usize,
    pub direct_tv: Option<f64>,
    pub direct_samples: usize,
    pub direct_out_of_domain: usize,
}

/// TV distance of a sample file against the exact 2-d target; with a
/// checkpoint and `direct > 0`, also of that many direct flow draws.
pub fn cmd_eval_gmm(cfg: &ExperimentConfig, samples: &Path, checkpoint: Option<&Path>, direct: usize) -> Result<GmmEval> {
    let problem = Problem::build(&cfg.target)?;
    let Problem::Gmm(gmm) = &problem else {
        return Err(Error::Config("eval-gmm needs a gmm target".into()));
    };
    if gmm.dim() != 2 {
        return Err(Error::Dimension(format!("eval-gmm needs a 2-d target, got {}", gmm.dim())));
    }
    let levels = gmm.levels();
    let exact = exact_pmf(gmm, MAX_EVAL_STATES)?;
    let s = DiscreteSamples::read_binary(samples)?;
    let tv = total_variation(&empirical_pmf(s.rows(), 2, levels, MAX_EVAL_STATES)?, &exact)?;
    let mut eval = GmmEval {
        tv,
        samples: s.len(),
        direct_tv: None,
        direct_samples: 0,
        direct_out_of_domain: 0,
    };
    if direct > 0 {
        let default_ckpt = cfg.out.join(CHECKPOINT);
        let model = FlowModel::load(checkpoint.unwrap_or(&default_ckpt))?;
        let density = LatentDensity::new(&model, gmm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.derived_seed(SeedStream::Direct));
        let mut rows = Vec::with_capacity(direct);
        let mut ood = 0;
        for _ in 0..direct {
            let z: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let (theta, flagged) = density.push(&z)?;
            ood += flagged as usize;
            rows.push(theta);
        }
        let h = empirical_pmf(&rows, 2, levels, MAX_EVAL_STATES)?;
        eval.direct_tv = Some(total_variation(&h, &exact)?);
        eval.direct_samples = direct;
        eval.direct_out_of_domain = ood;
    }
    std::fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("eval-gmm.json"), &eval)?;
    Ok(eval)
}
