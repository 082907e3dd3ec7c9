//! Builds concrete targets from their configuration.

use std::path::Path;

use discflow::flows::Level;
use discflow::targets::{
    binarize, corrupt, glyph_image, load_idx_images, load_labeled_csv, load_regression_csv,
    make_synthetic_bvs, standardize_columns, BayesVarSelect, BvsPrior, DiscreteTarget,
    DiscretizedGmm, GmmComponent, IsingDenoise, QuantGrid, QuantizedLogReg, SyntheticBvs,
};
use discflow::{Error, Result};

use crate::config::{PriorSpec, TargetSpec};

/// A target together with the data it was built from.
pub enum Problem {
    Gmm(DiscretizedGmm),
    Ising {
        model: IsingDenoise,
        truth: Vec<Level>,
        corrupted: Vec<Level>,
    },
    Qlogreg(QuantizedLogReg),
    BvsSynth(Box<SyntheticBvs>),
    Bvs(BayesVarSelect),
}

impl Problem {
    pub fn build(spec: &TargetSpec) -> Result<Self> {
        Ok(match spec {
            TargetSpec::Gmm { bits, components } => {
                let comps = components
                    .iter()
                    .map(|c| GmmComponent {
                        weight: c.weight,
                        mean: c.mean.clone(),
                        std: c.std.clone(),
                    })
                    .collect();
                Problem::Gmm(DiscretizedGmm::covering(comps, *bits)?)
            }
            TargetSpec::Ising {
                height,
                width,
                beta,
                eta,
                flip_prob,
                corrupt_seed,
                idx_path,
                image_index,
                threshold,
            } => {
                let truth = match idx_path {
                    Some(p) => idx_image(p, *height, *width, *image_index, *threshold)?,
                    None => glyph_image(*height, *width),
                };
                if !(0.0..=1.0).contains(flip_prob) {
                    return Err(Error::Config(format!("flip probability {flip_prob} outside [0, 1]")));
                }
                let corrupted = corrupt(&truth, *flip_prob, *corrupt_seed);
                let model = IsingDenoise::from_binary(*height, *width, *beta, *eta, &corrupted)?;
                Problem::Ising {
                    model,
                    truth,
                    corrupted,
                }
            }
            TargetSpec::Qlogreg {
                csv_path,
                levels,
                lo,
                hi,
                standardize,
            } => {
                let mut data = load_labeled_csv(csv_path)?;
                if *standardize {
                    standardize_columns(&mut data.features);
                }
                let grid = QuantGrid {
                    levels: *levels,
                    lo: *lo,
                    hi: *hi,
                };
                let classes = data.class_names.len();
                Problem::Qlogreg(QuantizedLogReg::new(data.features, data.labels, classes, grid)?)
            }
            TargetSpec::BvsSynth {
                features,
                informative,
                observations,
                noise_sigma,
                data_seed,
                prior,
            } => Problem::BvsSynth(Box::new(make_synthetic_bvs(
                *features,
                *informative,
                *observations,
                *noise_sigma,
                *data_seed,
                bvs_prior(prior),
            )?)),
            TargetSpec::BvsCsv {
                csv_path,
                response,
                prior,
            } => {
                let (x, y) = load_regression_csv(csv_path, response)?;
                Problem::Bvs(BayesVarSelect::new(x, y, bvs_prior(prior))?)
            }
        })
    }

    pub fn target(&self) -> &dyn DiscreteTarget {
        match self {
            Problem::Gmm(t) => t,
            Problem::Ising { model, .. } => model,
            Problem::Qlogreg(t) => t,
            Problem::BvsSynth(s) => &s.model,
            Problem::Bvs(t) => t,
        }
    }

    /// Writes generated datasets (CSV plus JSON sidecar) into `dir`.
    pub fn dump_dataset(&self, dir: &Path) -> Result<()> {
        if let Problem::BvsSynth(s) = self {
            s.write(&dir.join("dataset.csv"))?;
        }
        Ok(())
    }
}

fn bvs_prior(p: &PriorSpec) -> BvsPrior {
    BvsPrior {
        nu: p.nu,
        w: p.w,
        alpha: p.alpha,
    }
}

fn idx_image(path: &Path, height: usize, width: usize, index: usize, threshold: f64) -> Result<Vec<Level>> {
    let images = load_idx_images(path)?;
    if images.rows != height || images.cols != width {
        return Err(Error::Config(format!(
            "{} holds {}x{} images, config expects {height}x{width}",
            path.display(),
            images.rows,
            images.cols
        )));
    }
    if index >= images.count {
        return Err(Error::Config(format!(
            "image index {index} out of range for {} images",
            images.count
        )));
    }
    Ok(binarize(images.image(index), threshold))
}
