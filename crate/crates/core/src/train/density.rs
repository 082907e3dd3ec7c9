use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::flows::{std_normal_logpdf, FlowGrads, FlowModel, Level, RoundingSurjection, BOX_DELTA};
use crate::targets::DiscreteTarget;

/// The pullback of a discrete target into the Gaussian latent space:
/// `log p~(z) = log pi(theta) + log N(eps) - log|T_lambda'(eps; theta)| + log|T_phi'(z)|`
/// with `x = T_phi(z)`, `theta = floor(x)`, `u = x - theta`, `eps = T_lambda^{-1}(u; theta)`.
pub struct LatentDensity<'a, T: DiscreteTarget + ?Sized> {
    model: &'a FlowModel,
    target: &'a T,
    rounding: RoundingSurjection,
}

/// Everything computed along one evaluation of `log p~(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPoint {
    /// `log p~(z)`, using the clamped cell when `x` left the grid.
    pub log_density: f64,
    pub theta: Vec<Level>,
    pub out_of_domain: bool,
    pub x: Vec<f64>,
    pub log_pi: f64,
}

impl<'a, T: DiscreteTarget + ?Sized> Clone for LatentDensity<'a, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<'a, T: DiscreteTarget + ?Sized> Copy for LatentDensity<'a, T> {}

impl<'a, T: DiscreteTarget + ?Sized> LatentDensity<'a, T> {
    pub fn new(model: &'a FlowModel, target: &'a T) -> Result<Self> {
        ensure_dim("target dimension", model.dim(), target.dim())?;
        if model.levels() != target.levels() {
            return Err(Error::Dimension(format!(
                "flow built for {} levels, target has {}",
                model.levels(),
                target.levels()
            )));
        }
        Ok(Self {
            model,
            target,
            rounding: RoundingSurjection::new(model.dim(), model.levels()),
        })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn model(&self) -> &'a FlowModel {
        self.model
    }

    pub fn target(&self) -> &'a T {
        self.target
    }

    /// Full evaluation with all intermediate quantities.
    pub fn evaluate(&self, z: &[f64]) -> Result<LatentPoint> {
        ensure_dim("latent state", self.dim(), z.len())?;
        ensure_finite("latent state", z)?;
        let (point, _) = self.forward(z, None);
        if !point.log_density.is_finite() {
            return Err(Error::Numeric(format!(
                "latent log-density {} at z = {z:?}",
                point.log_density
            )));
        }
        Ok(point)
    }

    /// The MCMC target: `log p~(z)`, or `-inf` when `T_phi(z)` leaves the
    /// grid or any term is not finite. Restricting to the grid keeps `p~`
    /// integrable, with total mass `sum_theta pi(theta)`.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        if z.len() != self.dim() || z.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let (p, _) = self.forward(z, None);
        if p.out_of_domain || !p.log_density.is_finite() {
            f64::NEG_INFINITY
        } else {
            p.log_density
        }
    }

    /// [`Self::log_density`] together with its gradient in `z`, holding the
    /// cell assignment fixed. The gradient is zero wherever the value is `-inf`.
    pub fn log_density_and_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim();
        if z.len() != d || z.iter().any(|v| !v.is_finite()) {
            return (f64::NEG_INFINITY, vec![0.0; d]);
        }
        let mut scratch = self.model.zero_grads();
        let (p, g) = self.forward(z, Some((&mut scratch, false)));
        let g = g.unwrap_or_else(|| vec![0.0; d]);
        if p.out_of_domain || !p.log_density.is_finite() || g.iter().any(|v| !v.is_finite()) {
            (f64::NEG_INFINITY, vec![0.0; d])
        } else {
            (p.log_density, g)
        }
    }

    /// `theta = floor(T_phi(z))`, clamped into the grid, and the clamp flag.
    pub fn push(&self, z: &[f64]) -> Result<(Vec<Level>, bool)> {
        let (x, _) = self.model.phi.forward(z)?;
        let r = self.rounding.round_forward(&x)?;
        Ok((r.theta, r.out_of_domain))
    }

    /// Shared forward pass. When `grads` is given, also backpropagates
    /// `d log p~ / d params` into it (accumulating) and returns `d log p~ / dz`.
    pub(crate) fn forward(
        &self,
        z: &[f64],
        grads: Option<(&mut FlowGrads, bool)>,
    ) -> (LatentPoint, Option<Vec<f64>>) {
        let (x, ld_phi, phi_tape) = self.model.phi.forward_tape(z);
        let rounded = self.rounding.round_unchecked(&x);
        let mut interior = vec![true; x.len()];
        let u: Vec<f64> = x
            .iter()
            .zip(&rounded.raw_floor)
            .zip(interior.iter_mut())
            .map(|((&xi, &f), inside)| {
                let raw = xi - f as f64;
                let clamped = raw.clamp(BOX_DELTA, 1.0 - BOX_DELTA);
                *inside = clamped == raw;
                clamped
            })
            .collect();
        let theta = rounded.theta;
        let (eps, ld_fwd, dq_tape) = self.model.lambda.inverse_tape(&theta, &u);
        let log_pi = self.target.log_prob(&theta);
        let log_density = log_pi + std_normal_logpdf(&eps) - ld_fwd + ld_phi;
        let g_z = grads.map(|(grads, straight_through)| {
            let g_eps: Vec<f64> = eps.iter().map(|e| -e).collect();
            let g_u = self
                .model
                .lambda
                .backward_inverse(&dq_tape, &g_eps, -1.0, &mut grads.lambda);
            let g_x: Vec<f64> = if straight_through {
                (0..x.len())
                    .map(|i| self.surrogate_slope(&theta, i, u[i]))
                    .collect()
            } else {
                g_u.iter()
                    .zip(&interior)
                    .map(|(&g, &inside)| if inside { g } else { 0.0 })
                    .collect()
            };
            self.model.phi.backward_forward(&phi_tape, &g_x, 1.0, &mut grads.phi)
        });
        let point = LatentPoint {
            log_density,
            theta,
            out_of_domain: rounded.out_of_domain,
            x,
            log_pi,
        };
        (point, g_z)
    }

    /// Slope along axis `i` of the piecewise-linear interpolant of `log pi`
    /// through the cell centres, at offset `u` inside cell `theta`.
    fn surrogate_slope(&self, theta: &[Level], i: usize, u: f64) -> f64 {
        let top = self.target.levels() as Level - 1;
        if top == 0 {
            return 0.0;
        }
        let t = theta[i];
        let upward = if u >= 0.5 { t < top } else { t == 0 };
        if upward {
            self.target.log_prob_delta(theta, i, t + 1)
        } else {
            -self.target.log_prob_delta(theta, i, t - 1)
        }
    }
}
