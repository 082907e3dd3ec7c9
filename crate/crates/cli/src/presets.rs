//! Named experiment presets. Protocol settings that are not overridden keep
//! the full-scale defaults; `desk_scale` shrinks them.

use std::path::PathBuf;

use discflow::{Error, Result};

use crate::config::{
    ComponentSpec, ExperimentConfig, FlowSpec, PriorSpec, SamplerSpec, TargetSpec, TrainSpec,
};

pub const PRESETS: &[&str] = &[
    "gmm2d",
    "ising-mnist",
    "ising-small",
    "qlogreg-csv",
    "bvs-synth-100",
    "bvs-synth-200",
    "bvs-synth-400",
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "gmm2d" => gmm2d(),
        "ising-mnist" => ising(
            name,
            28,
            28,
            Some(PathBuf::from("data/train-images-idx3-ubyte")),
            FlowSpec::default(),
        ),
        "ising-small" => ising(
            name,
            16,
            16,
            None,
            FlowSpec {
                phi_depth: 4,
                lambda_depth: 2,
                lambda_hidden: vec![32],
                ..FlowSpec::default()
            },
        ),
        "qlogreg-csv" => ExperimentConfig {
            name: name.into(),
            seed: 0,
            desk_scale: 1.0,
            out: PathBuf::from("runs").join(name),
            target: TargetSpec::Qlogreg {
                csv_path: PathBuf::from("data/qlogreg.csv"),
                levels: 16,
                lo: -2.0,
                hi: 2.0,
                standardize: true,
            },
            flow: FlowSpec::default(),
            train: straight_through(),
            sampler: SamplerSpec::default(),
        },
        "bvs-synth-100" => bvs(name, 100, 10),
        "bvs-synth-200" => bvs(name, 200, 20),
        "bvs-synth-400" => bvs(name, 400, 40),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}`; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

fn straight_through() -> TrainSpec {
    TrainSpec {
        straight_through: true,
        ..TrainSpec::default()
    }
}

/// Five components on a ring, binned at 6 bits per axis.
fn gmm2d() -> ExperimentConfig {
    let comp = |weight: f64, mean: [f64; 2], std: [f64; 2]| ComponentSpec {
        weight,
        mean: mean.to_vec(),
        std: std.to_vec(),
    };
    ExperimentConfig {
        name: "gmm2d".into(),
        seed: 0,
        desk_scale: 1.0,
        out: PathBuf::from("runs/gmm2d"),
        target: TargetSpec::Gmm {
            bits: 6,
            components: vec![
                comp(0.15, [3.0, 0.0], [0.8, 0.7]),
                comp(0.2, [0.93, 2.85], [0.7, 0.9]),
                comp(0.25, [-2.43, 1.76], [0.9, 0.8]),
                comp(0.2, [-2.43, -1.76], [0.8, 0.8]),
                comp(0.2, [0.93, -2.85], [0.7, 0.8]),
            ],
        },
        flow: FlowSpec {
            lambda_depth: 4,
            ..FlowSpec::default()
        },
        train: straight_through(),
        sampler: SamplerSpec::default(),
    }
}

fn ising(name: &str, height: usize, width: usize, idx_path: Option<PathBuf>, flow: FlowSpec) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        seed: 0,
        desk_scale: 1.0,
        out: PathBuf::from("runs").join(name),
        target: TargetSpec::Ising {
            height,
            width,
            beta: 1.0,
            eta: 1.0,
            flip_prob: 0.1,
            corrupt_seed: 7,
            idx_path,
            image_index: 0,
            threshold: 0.5,
        },
        flow,
        train: straight_through(),
        sampler: SamplerSpec {
            adapt_steps: 500,
            target_accept: 0.25,
            ..SamplerSpec::default()
        },
    }
}

/// `features` candidate predictors of which `informative` are active, with
/// twice as many observations as features.
fn bvs(name: &str, features: usize, informative: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        seed: 0,
        desk_scale: 1.0,
        out: PathBuf::from("runs").join(name),
        target: TargetSpec::BvsSynth {
            features,
            informative,
            observations: 2 * features,
            noise_sigma: 1.0,
            data_seed: 11,
            prior: PriorSpec::default(),
        },
        flow: FlowSpec::default(),
        train: straight_through(),
        sampler: SamplerSpec::default(),
    }
}
