use super::Level;
use crate::error::{ensure_dim, ensure_finite, Error, Result};

/// Deterministic `theta = floor(x)` onto the grid `{0, ..., K-1}^d`; the
/// stochastic inverse lives in [`super::DequantFlow`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundingSurjection {
    pub dim: usize,
    pub levels: usize,
}

/// Result of rounding a continuous point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rounded {
    /// Cell index, clamped into the grid.
    pub theta: Vec<Level>,
    /// Raw floors before clamping; `x - raw_floor` is the in-cell offset.
    pub raw_floor: Vec<i64>,
    /// Set when any coordinate had to be clamped.
    pub out_of_domain: bool,
}

impl RoundingSurjection {
    pub fn new(dim: usize, levels: usize) -> Self {
        Self { dim, levels }
    }

    pub fn round_forward(&self, x: &[f64]) -> Result<Rounded> {
        ensure_dim("rounding input", self.dim, x.len())?;
        ensure_finite("rounding input", x)?;
        Ok(self.round_unchecked(x))
    }

    pub(crate) fn round_unchecked(&self, x: &[f64]) -> Rounded {
        let top = self.levels as i64 - 1;
        let mut out_of_domain = false;
        let mut theta = Vec::with_capacity(x.len());
        let mut raw_floor = Vec::with_capacity(x.len());
        for &v in x {
            let f = v.floor();
            // saturating cast keeps huge values well-defined
            let raw = f as i64;
            let clamped = raw.clamp(0, top);
            out_of_domain |= clamped != raw;
            theta.push(clamped as Level);
            raw_floor.push(raw);
        }
        Rounded {
            theta,
            raw_floor,
            out_of_domain,
        }
    }

    /// `x = theta + u` for `u in [0, 1)^d`.
    pub fn round_inverse(&self, theta: &[Level], u: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("cell index", self.dim, theta.len())?;
        ensure_dim("offset", self.dim, u.len())?;
        if let Some(p) = u.iter().find(|&&p| !(0.0..1.0).contains(&p)) {
            return Err(Error::Domain(format!("offset {p} outside [0, 1)")));
        }
        if let Some(t) = theta
            .iter()
            .find(|&&t| t < 0 || t as usize >= self.levels)
        {
            return Err(Error::Domain(format!("level {t} outside 0..{}", self.levels)));
        }
        // offsets within one ulp of 1 would otherwise round into the next cell
        Ok(theta
            .iter()
            .zip(u)
            .map(|(&t, &p)| (t as f64 + p).min((t as f64 + 1.0).next_down()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn floors_inside_grid() {
        let r = RoundingSurjection::new(2, 4);
        let out = r.round_forward(&[2.7, 0.3]).unwrap();
        assert_eq!(out.theta, vec![2, 0]);
        assert!(!out.out_of_domain);
        assert_eq!(RoundingSurjection::new(1, 4).round_forward(&[3.0]).unwrap().theta, vec![3]);
    }

    #[test]
    fn clamps_and_flags_outside_grid() {
        let r = RoundingSurjection::new(1, 4);
        let out = r.round_forward(&[-0.2]).unwrap();
        assert_eq!(out.theta, vec![0]);
        assert_eq!(out.raw_floor, vec![-1]);
        assert!(out.out_of_domain);
        let out = r.round_forward(&[4.0]).unwrap();
        assert_eq!(out.theta, vec![3]);
        assert!(out.out_of_domain);
    }

    #[test]
    fn inverse_adds_offset_and_rejects_closed_edge() {
        let r = RoundingSurjection::new(1, 4);
        assert_eq!(r.round_inverse(&[2], &[0.7]).unwrap(), vec![2.7]);
        assert!(matches!(r.round_inverse(&[2], &[1.0]), Err(Error::Domain(_))));
        assert!(matches!(r.round_inverse(&[2], &[-0.1]), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn rounding_inverts_lift(
            cells in proptest::collection::vec(0i32..16, 1..8),
            frac in proptest::collection::vec(0.0f64..1.0, 8),
        ) {
            let d = cells.len();
            let r = RoundingSurjection::new(d, 16);
            let x = r.round_inverse(&cells, &frac[..d]).unwrap();
            let back = r.round_forward(&x).unwrap();
            prop_assert_eq!(back.theta, cells);
            prop_assert!(!back.out_of_domain);
        }
    }
}
