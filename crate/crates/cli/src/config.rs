//! Experiment configuration: TOML files, named presets and desk scaling.

use std::path::{Path, PathBuf};

use discflow::flows::{FlowArch, SCALE_CLAMP};
use discflow::samplers::{LatentKernel, DEFAULT_STEP_SIZE};
use discflow::train::TrainConfig;
use discflow::{Error, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::presets;

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "unit")]
    pub desk_scale: f64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub target: TargetSpec,
    #[serde(default)]
    pub flow: FlowSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub sampler: SamplerSpec,
}

fn unit() -> f64 {
    1.0
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

/// One Gaussian component of a binned mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Target family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Mixture binned onto `2^bits` cells per axis of its covering box.
    Gmm {
        bits: u32,
        components: Vec<ComponentSpec>,
    },
    /// Ising denoising of an IDX image, or of the built-in ring glyph when
    /// no path is given.
    Ising {
        height: usize,
        width: usize,
        #[serde(default = "unit")]
        beta: f64,
        #[serde(default = "unit")]
        eta: f64,
        #[serde(default = "default_flip")]
        flip_prob: f64,
        #[serde(default)]
        corrupt_seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idx_path: Option<PathBuf>,
        #[serde(default)]
        image_index: usize,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    /// Quantized multinomial logistic regression on a CSV with a `label` column.
    Qlogreg {
        csv_path: PathBuf,
        #[serde(default = "default_qlevels")]
        levels: usize,
        #[serde(default = "default_qlo")]
        lo: f64,
        #[serde(default = "default_qhi")]
        hi: f64,
        #[serde(default = "yes")]
        standardize: bool,
    },
    /// Variable selection on a generated Gaussian design.
    BvsSynth {
        features: usize,
        informative: usize,
        observations: usize,
        #[serde(default = "unit")]
        noise_sigma: f64,
        #[serde(default)]
        data_seed: u64,
        #[serde(default)]
        prior: PriorSpec,
    },
    /// Variable selection on a numeric CSV.
    BvsCsv {
        csv_path: PathBuf,
        #[serde(default = "default_response")]
        response: String,
        #[serde(default)]
        prior: PriorSpec,
    },
}

fn default_flip() -> f64 {
    0.1
}

fn default_threshold() -> f64 {
    0.5
}

fn default_qlevels() -> usize {
    16
}

fn default_qlo() -> f64 {
    -2.0
}

fn default_qhi() -> f64 {
    2.0
}

fn yes() -> bool {
    true
}

fn default_response() -> String {
    "y".into()
}

/// Conjugate prior hyperparameters for variable selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub nu: f64,
    pub w: f64,
    pub alpha: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        let p = discflow::targets::BvsPrior::default();
        Self {
            nu: p.nu,
            w: p.w,
            alpha: p.alpha,
        }
    }
}

/// Architectures of `T_phi` and `T_lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSpec {
    pub phi_depth: usize,
    pub phi_hidden: Vec<usize>,
    pub lambda_depth: usize,
    pub lambda_hidden: Vec<usize>,
    pub clamp: f64,
    pub squash: bool,
}

impl Default for FlowSpec {
    fn default() -> Self {
        let a = FlowArch::default();
        Self {
            phi_depth: a.depth,
            phi_hidden: a.hidden.clone(),
            lambda_depth: 4,
            lambda_hidden: a.hidden,
            clamp: SCALE_CLAMP,
            squash: true,
        }
    }
}

impl FlowSpec {
    pub fn phi_arch(&self) -> FlowArch {
        FlowArch {
            depth: self.phi_depth,
            hidden: self.phi_hidden.clone(),
            clamp: self.clamp,
        }
    }

    pub fn lambda_arch(&self) -> FlowArch {
        FlowArch {
            depth: self.lambda_depth,
            hidden: self.lambda_hidden.clone(),
            clamp: self.clamp,
        }
    }
}

/// Optimizer settings; the seed is derived from the experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub checkpoint_every: usize,
    pub straight_through: bool,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            iterations: t.iterations,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            checkpoint_every: t.checkpoint_every,
            straight_through: t.straight_through,
        }
    }
}

/// Latent transition kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Mh,
    Hmc,
}

/// Which series the ESS is computed on for flow samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EssSpace {
    Theta,
    Latent,
}

/// Chain protocol shared by the flow sampler and the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub kernel: KernelKind,
    pub chains: usize,
    pub steps: usize,
    pub thin: usize,
    /// Burn-in applied to the baselines.
    pub burn_in: usize,
    /// Burn-in applied to flow chains, after any adaptation.
    pub flow_burn_in: usize,
    pub step_size: f64,
    pub n_leapfrog: usize,
    /// Step-size adaptation steps before sampling; zero keeps `step_size`.
    pub adapt_steps: usize,
    pub target_accept: f64,
    pub group_size: usize,
    pub ess_space: EssSpace,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Mh,
            chains: 128,
            steps: 100_000,
            thin: 10,
            burn_in: 100_000,
            flow_burn_in: 0,
            step_size: DEFAULT_STEP_SIZE,
            n_leapfrog: 10,
            adapt_steps: 0,
            target_accept: 0.3,
            group_size: discflow::diagnostics::DEFAULT_GROUP_SIZE,
            ess_space: EssSpace::Theta,
        }
    }
}

impl SamplerSpec {
    pub fn latent_kernel(&self) -> LatentKernel {
        match self.kernel {
            KernelKind::Mh => LatentKernel::Mh {
                step_size: self.step_size,
            },
            KernelKind::Hmc => LatentKernel::Hmc {
                step_size: self.step_size,
                n_leapfrog: self.n_leapfrog,
            },
        }
    }
}

/// Independent random streams carved out of the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Init = 0,
    Train = 1,
    Sampler = 2,
    Baseline = 3,
    Direct = 4,
}

impl ExperimentConfig {
    /// Well-mixed seed for one stream, so chain seeds `master ^ i` of
    /// nearby experiment seeds do not overlap.
    pub fn derived_seed(&self, stream: SeedStream) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);
        rng.next_u64()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: self.derived_seed(SeedStream::Train),
            checkpoint_every: self.train.checkpoint_every.max(1),
            straight_through: self.train.straight_through,
        }
    }

    /// Copy with iterations, steps and burn-in multiplied by `desk_scale`;
    /// the scale is then reset to one.
    pub fn scaled(&self) -> Result<Self> {
        let f = self.desk_scale;
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::Config(format!("desk scale must be positive, got {f}")));
        }
        let scale = |n: usize| (n as f64 * f).round() as usize;
        let mut c = self.clone();
        c.train.iterations = scale(c.train.iterations);
        c.sampler.steps = scale(c.sampler.steps).max(c.sampler.thin);
        c.sampler.burn_in = scale(c.sampler.burn_in);
        c.sampler.flow_burn_in = scale(c.sampler.flow_burn_in);
        c.desk_scale = 1.0;
        Ok(c)
    }

    /// Structural checks, including that referenced datasets exist.
    pub fn validate(&self) -> Result<()> {
        let s = &self.sampler;
        if s.chains == 0 || s.thin == 0 || s.group_size == 0 {
            return Err(Error::Config("chains, thinning and group size must be positive".into()));
        }
        if !(s.step_size > 0.0 && s.step_size.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {}", s.step_size)));
        }
        if !(0.0..1.0).contains(&s.target_accept) || s.target_accept == 0.0 {
            return Err(Error::Config(format!(
                "target acceptance must lie in (0, 1), got {}",
                s.target_accept
            )));
        }
        if s.kernel == KernelKind::Hmc && s.n_leapfrog == 0 {
            return Err(Error::Config("HMC needs at least one leapfrog step".into()));
        }
        if self.flow.phi_hidden.contains(&0) || self.flow.lambda_hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.train_config().validate()?;
        for p in self.dataset_paths() {
            if !p.exists() {
                return Err(Error::Config(format!("dataset {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn dataset_paths(&self) -> Vec<&Path> {
        match &self.target {
            TargetSpec::Ising { idx_path: Some(p), .. } => vec![p.as_path()],
            TargetSpec::Qlogreg { csv_path, .. } | TargetSpec::BvsCsv { csv_path, .. } => {
                vec![csv_path.as_path()]
            }
            _ => Vec::new(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialization: {e}")))
    }

    /// SHA-256 of the canonical TOML form, as lowercase hex.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Parses TOML text. A top-level `preset = "name"` key supplies defaults
    /// that the remaining keys override table by table.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut value: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        let merged = match value.remove("preset") {
            Some(toml::Value::String(name)) => {
                let mut base = preset_table(&name)?;
                merge(&mut base, value);
                base
            }
            Some(other) => {
                return Err(Error::Config(format!("preset must be a string, got {other}")));
            }
            None => value,
        };
        toml::Value::Table(merged)
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

fn preset_table(name: &str) -> Result<toml::Table> {
    let cfg = presets::preset(name)?;
    let text = cfg.to_toml()?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("preset {name}: {e}")))
}

/// Recursive table merge; a target of a different kind replaces the base target.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let same_kind = k != "target" || o.get("kind").is_none_or(|kind| Some(kind) == b.get("kind"));
                if same_kind {
                    merge(b, o);
                } else {
                    base.insert(k, toml::Value::Table(o));
                }
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
