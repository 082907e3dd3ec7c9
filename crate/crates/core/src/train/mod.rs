//! The latent pullback density, the Monte Carlo training objective and the
//! Adam loop that fits `T_phi` and `T_lambda` jointly.

mod density;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub use density::{LatentDensity, LatentPoint};

use crate::error::{ensure_dim, Error, Result};
use crate::flows::{FlowGrads, FlowModel};
use crate::numcore::{log_sum_exp, AdamConfig, AdamState, RealMat};
use crate::targets::DiscreteTarget;

/// Batch rows handled per work unit; fixed so the reduction order, and
/// hence every bit of the result, is independent of the thread count.
const CHUNK: usize = 16;

/// Optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Adds the slope of a piecewise-linear interpolant of `log pi` as a
    /// surrogate gradient through the floor.
    pub straight_through: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            checkpoint_every: 1_000,
            straight_through: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("batch size and checkpoint cadence must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Batch objective with its parameter gradient.
#[derive(Debug, Clone)]
pub struct Objective {
    /// Mean of `log p~(z_i)` over the batch (to be maximized).
    pub value: f64,
    pub grads: FlowGrads,
    /// Fraction of the batch whose `T_phi(z)` left the grid.
    pub ood_rate: f64,
}

/// Batch mean of `log p~(z_i)` and its gradient. The floor is treated as
/// locally constant unless `straight_through` is set.
pub fn objective_and_grads<T: DiscreteTarget + ?Sized>(
    model: &FlowModel,
    target: &T,
    z_batch: &RealMat,
    straight_through: bool,
) -> Result<Objective> {
    let density = LatentDensity::new(model, target)?;
    ensure_dim("latent batch width", model.dim(), z_batch.cols())?;
    let n = z_batch.rows();
    if n == 0 {
        return Err(Error::Config("empty training batch".into()));
    }
    let partials: Vec<Result<(f64, usize, FlowGrads)>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut grads = model.zero_grads();
            let mut total = 0.0;
            let mut ood = 0;
            for r in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let z = z_batch.row(r);
                let (point, _) = density.forward(z, Some((&mut grads, straight_through)));
                if !point.log_density.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite objective {} at z = {z:?}",
                        point.log_density
                    )));
                }
                total += point.log_density;
                ood += point.out_of_domain as usize;
            }
            Ok((total, ood, grads))
        })
        .collect();
    let mut grads = model.zero_grads();
    let mut total = 0.0;
    let mut ood = 0;
    for part in partials {
        let (t, o, g) = part?;
        total += t;
        ood += o;
        grads.add_assign(&g);
    }
    let scale = 1.0 / n as f64;
    grads.scale(scale);
    Ok(Objective {
        value: total * scale,
        grads,
        ood_rate: ood as f64 * scale,
    })
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub ood_rate: f64,
    pub grad_norm: f64,
}

/// Per-iteration training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    /// Trailing moving average of the objective over non-overlapping windows.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        self.rows
            .chunks(window.max(1))
            .map(|c| c.iter().map(|r| r.objective).sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "objective", "ood_rate", "grad_norm"])?;
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                r.objective.to_string(),
                r.ood_rate.to_string(),
                r.grad_norm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fits the model by Adam ascent on [`objective_and_grads`].
pub fn fit<T: DiscreteTarget + ?Sized>(
    model: &mut FlowModel,
    target: &T,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    fit_with_checkpoints(model, target, config, |_, _| Ok(()))
}

/// As [`fit`], calling `on_checkpoint(iterations_done, model)` every
/// `checkpoint_every` iterations. On divergence the model is rolled back to
/// the last checkpoint (or its initial state) before the error is returned.
pub fn fit_with_checkpoints<T, F>(
    model: &mut FlowModel,
    target: &T,
    config: &TrainConfig,
    mut on_checkpoint: F,
) -> Result<TrainTrace>
where
    T: DiscreteTarget + ?Sized,
    F: FnMut(usize, &FlowModel) -> Result<()>,
{
    config.validate()?;
    LatentDensity::new(model, target)?;
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let adam = AdamConfig::with_lr(config.learning_rate);
    let mut states: Vec<AdamState> = model
        .zero_grads()
        .buffers()
        .map(|b| AdamState::new(b.len(), adam))
        .collect();
    let mut last_good = model.clone();
    let mut trace = TrainTrace::default();
    for it in 0..config.iterations {
        let data: Vec<f64> = (0..config.batch_size * d)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let batch = RealMat::from_vec(config.batch_size, d, data)?;
        let obj = match objective_and_grads(model, target, &batch, config.straight_through) {
            Ok(o) => o,
            Err(e) => {
                *model = last_good;
                return Err(Error::Training(format!("iteration {it}: {e}")));
            }
        };
        let grad_norm = obj.grads.norm();
        if !grad_norm.is_finite() {
            *model = last_good;
            return Err(Error::Training(format!("iteration {it}: non-finite gradient")));
        }
        trace.rows.push(TraceRow {
            iteration: it,
            objective: obj.value,
            ood_rate: obj.ood_rate,
            grad_norm,
        });
        for ((params, grads), state) in model
            .param_buffers_mut()
            .into_iter()
            .zip(obj.grads.buffers())
            .zip(states.iter_mut())
        {
            let descent: Vec<f64> = grads.iter().map(|g| -g).collect();
            state.step(params, &descent)?;
        }
        if (it + 1) % config.checkpoint_every == 0 {
            last_good = model.clone();
            on_checkpoint(it + 1, model)?;
        }
    }
    Ok(trace)
}

/// Importance estimate of `log sum_theta pi(theta)` from `n` draws
/// `z ~ N(0, I)`: `log mean exp(log p~(z) - log N(z))`. Also returns the
/// relative standard error of the (non-log) estimate.
pub fn estimate_log_normalizer<T: DiscreteTarget + ?Sized, R: Rng + ?Sized>(
    density: &LatentDensity<'_, T>,
    n: usize,
    rng: &mut R,
) -> (f64, f64) {
    let d = density.dim();
    let mut z = vec![0.0; d];
    let log_w: Vec<f64> = (0..n)
        .map(|_| {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            density.log_density(&z) - crate::flows::std_normal_logpdf(&z)
        })
        .collect();
    let lse = log_sum_exp(&log_w);
    let log_mean = lse - (n as f64).ln();
    let w: Vec<f64> = log_w.iter().map(|l| (l - log_mean).exp()).collect();
    let var = w.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    (log_mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{FlowArch, Level};
    use crate::targets::{TabulatedTarget, UniformTarget};

    fn random_model(dim: usize, levels: usize, squash: bool, seed: u64) -> FlowModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = FlowArch {
            depth: 3,
            hidden: vec![5],
            clamp: 5.0,
        };
        let mut m = FlowModel::new(dim, levels, &arch, &arch, squash, &mut rng).unwrap();
        for buf in m.param_buffers_mut() {
            for p in buf.iter_mut() {
                *p = 0.4 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        m
    }

    fn cells(model: &FlowModel, target: &TabulatedTarget, batch: &RealMat) -> Vec<(Vec<Level>, Vec<bool>)> {
        let l = LatentDensity::new(model, target).unwrap();
        (0..batch.rows())
            .map(|r| {
                let p = l.evaluate(batch.row(r)).unwrap();
                let interior = p
                    .x
                    .iter()
                    .map(|x| {
                        let u = x - x.floor();
                        u > crate::flows::BOX_DELTA && u < 1.0 - crate::flows::BOX_DELTA
                    })
                    .collect();
                (p.theta, interior)
            })
            .collect()
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (seed, squash) in [(1, true), (2, false), (3, true)] {
            let (d, k) = (3, 4);
            let mut model = random_model(d, k, squash, seed);
            let masses: Vec<f64> = (0..64).map(|_| rng.random_range(0.1..2.0)).collect();
            let target = TabulatedTarget::from_masses(d, k, &masses).unwrap();
            let data: Vec<f64> = (0..4 * d)
                .map(|_| if squash { rng.sample(StandardNormal) } else { rng.random_range(0.2..3.8) })
                .collect();
            let batch = RealMat::from_vec(4, d, data).unwrap();
            let obj = objective_and_grads(&model, &target, &batch, false).unwrap();
            let base = cells(&model, &target, &batch);
            let flat: Vec<f64> = obj.grads.buffers().flat_map(|b| b.iter().copied()).collect();
            let h = 1e-6;
            let mut checked = 0;
            for idx in (0..flat.len()).step_by(7) {
                let bump = |m: &mut FlowModel, delta: f64| {
                    let mut i = idx;
                    for buf in m.param_buffers_mut() {
                        if i < buf.len() {
                            buf[i] += delta;
                            return;
                        }
                        i -= buf.len();
                    }
                };
                bump(&mut model, h);
                let same_up = cells(&model, &target, &batch) == base;
                let up = objective_and_grads(&model, &target, &batch, false).unwrap().value;
                bump(&mut model, -2.0 * h);
                let same_down = cells(&model, &target, &batch) == base;
                let down = objective_and_grads(&model, &target, &batch, false).unwrap().value;
                bump(&mut model, h);
                if !(same_up && same_down) {
                    continue;
                }
                let fd = (up - down) / (2.0 * h);
                let err = (fd - flat[idx]).abs() / fd.abs().max(flat[idx].abs()).max(1e-3);
                assert!(err < 1e-4, "param {idx}: analytic {} vs numeric {fd}", flat[idx]);
                checked += 1;
            }
            assert!(checked > 20);
        }
    }

    #[test]
    fn identity_flows_have_flat_log_determinants() {
        let model = FlowModel::new(2, 4, &FlowArch::default(), &FlowArch::default(), false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let target = UniformTarget { dim: 2, levels: 4 };
        let l = LatentDensity::new(&model, &target).unwrap();
        for z in [[0.5, 1.5], [2.5, 3.5]] {
            let (v, g) = l.log_density_and_grad(&z);
            assert!((v - 2.0 * 0.4674).abs() < 1e-3);
            assert!(g.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn batch_of_one_is_single_evaluation() {
        let model = random_model(2, 3, true, 4);
        let target = UniformTarget { dim: 2, levels: 3 };
        let z = [0.3, -0.8];
        let obj = objective_and_grads(&model, &target, &RealMat::from_vec(1, 2, z.to_vec()).unwrap(), false).unwrap();
        let single = LatentDensity::new(&model, &target).unwrap().evaluate(&z).unwrap();
        assert_eq!(obj.value, single.log_density);
    }

    #[test]
    fn zero_iterations_leave_parameters_alone() {
        let mut model = random_model(2, 3, true, 5);
        let before = model.clone();
        let cfg = TrainConfig { iterations: 0, ..TrainConfig::default() };
        let trace = fit(&mut model, &UniformTarget { dim: 2, levels: 3 }, &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn fitting_is_deterministic() {
        let target = TabulatedTarget::from_masses(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        let cfg = TrainConfig { iterations: 20, batch_size: 40, seed: 3, ..TrainConfig::default() };
        let mut a = random_model(2, 3, true, 6);
        let mut b = a.clone();
        let ta = fit(&mut a, &target, &cfg).unwrap();
        let tb = fit(&mut b, &target, &cfg).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
        assert_eq!(ta.len(), 20);
    }
}
