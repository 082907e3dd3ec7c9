use super::BOX_DELTA;
use crate::error::{ensure_finite, Error, Result};

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log sigma'(v) = log sigma(v) + log(1 - sigma(v))`, stable for large |v|.
#[inline]
pub(crate) fn log_sigmoid_derivative(v: f64) -> f64 {
    -softplus(-v) - softplus(v)
}

#[inline]
pub(crate) fn clamp_unit(u: f64) -> f64 {
    u.clamp(BOX_DELTA, 1.0 - BOX_DELTA)
}

/// Elementwise `u = sigma(v)` clamped into `[delta, 1 - delta]`, with
/// `logdet = sum log sigma'(v)`.
pub fn sigmoid_forward(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    ensure_finite("sigmoid input", v)?;
    let u = v.iter().map(|&x| clamp_unit(sigmoid(x))).collect();
    let logdet = v.iter().map(|&x| log_sigmoid_derivative(x)).sum();
    Ok((u, logdet))
}

/// Elementwise logit. Returns `(v, log|det dv/du|)`; `u` must lie strictly
/// inside the unit box.
pub fn sigmoid_inverse(u: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_open_unit("logit input", u)?;
    let v = u.iter().map(|&p| logit(p)).collect();
    let logdet = -u.iter().map(|&p| p.ln() + (1.0 - p).ln()).sum::<f64>();
    Ok((v, logdet))
}

#[inline]
pub(crate) fn logit(p: f64) -> f64 {
    p.ln() - (1.0 - p).ln()
}

pub(crate) fn check_open_unit(what: &str, u: &[f64]) -> Result<()> {
    if let Some((i, p)) = u.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::Domain(format!("{what}: entry {i} = {p} not in (0, 1)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_maps_to_half() {
        let (u, ld) = sigmoid_forward(&[0.0]).unwrap();
        assert_eq!(u, vec![0.5]);
        assert!((ld - 0.25f64.ln()).abs() < 1e-15);
        assert!((ld + 1.3863).abs() < 1e-4);
    }

    #[test]
    fn logdet_is_additive() {
        let (_, ld) = sigmoid_forward(&[0.0, 0.0]).unwrap();
        assert!((ld - 2.0 * 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn outputs_stay_inside_the_box() {
        let (u, ld) = sigmoid_forward(&[-800.0, 800.0]).unwrap();
        assert_eq!(u, vec![BOX_DELTA, 1.0 - BOX_DELTA]);
        assert!(ld.is_finite());
    }

    #[test]
    fn logit_rejects_boundary() {
        assert!(matches!(sigmoid_inverse(&[0.0]), Err(Error::Domain(_))));
        assert!(matches!(sigmoid_inverse(&[0.5, 1.0]), Err(Error::Domain(_))));
        assert!(matches!(sigmoid_inverse(&[f64::NAN]), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn logit_inverts_sigmoid(v in -10.0f64..10.0) {
            let (u, ld) = sigmoid_forward(&[v]).unwrap();
            let (back, ld_inv) = sigmoid_inverse(&u).unwrap();
            prop_assert!((back[0] - v).abs() < 1e-9);
            prop_assert!((ld + ld_inv).abs() < 1e-9);
        }
    }
}
