use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::{erf, erfc};

/// Standard normal CDF.
pub fn ndtr(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `log Phi(x)`, accurate deep into both tails.
pub fn log_ndtr(x: f64) -> f64 {
    if x > 6.0 {
        (-0.5 * erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else if x > -30.0 {
        (0.5 * erfc(-x * FRAC_1_SQRT_2)).ln()
    } else if x == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        // Mills-ratio expansion
        let r = 1.0 / (x * x);
        let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
        -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// Inverse standard normal CDF on `(0, 1)`: Acklam's rational
/// approximation refined by one Halley step.
pub fn ndtri(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return match p {
            0.0 => f64::NEG_INFINITY,
            1.0 => f64::INFINITY,
            _ => f64::NAN,
        };
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let lower = p.min(1.0 - p);
    let x = if lower < 0.024_25 {
        let v = tail((-2.0 * lower.ln()).sqrt());
        if p < 0.5 {
            v
        } else {
            -v
        }
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // Halley refinement against the accurate CDF, in the tail that keeps precision
    let (e, x0) = if p < 0.5 {
        (ndtr(x) - p, x)
    } else {
        ((1.0 - p) - 0.5 * erfc(x * FRAC_1_SQRT_2), x)
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x0 * x0).exp();
    x0 - u / (1.0 + 0.5 * x0 * u)
}

/// `log(Phi(b) - Phi(a))` for `a < b`.
pub fn log_diff_ndtr(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        return log_diff_ndtr(-b, -a);
    }
    if b > 0.0 {
        let m = 0.5 * (erf(b * FRAC_1_SQRT_2) - erf(a * FRAC_1_SQRT_2));
        return m.ln();
    }
    let lb = log_ndtr(b);
    let la = log_ndtr(a);
    lb + (-(la - lb).exp()).ln_1p()
}
