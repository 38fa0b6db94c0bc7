//! Special functions, quadrature, small dense linear algebra and optimizers.
//!
//! Everything here is pure and deterministic.

pub mod linalg;
pub mod optimize;
pub mod quadrature;
pub mod special;

pub use quadrature::{
    gauss_hermite, integrate, integrate_ln, Integral, IntegrationOptions, QuadratureKind, QuadratureRule,
};
pub use special::{
    beta_ln_pdf, beta_quantile, inv_logit, ln_add_exp, ln_beta_interval_mass, ln_diff_exp,
    ln_reg_inc_beta, ln_reg_inc_beta_upper, ln_sigmoid, ln_sum_exp, log_beta, log_gamma, logit,
    reg_inc_beta,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{function}: argument {value} outside the domain")]
    Domain { function: &'static str, value: f64 },
    #[error("{function}: no convergence after {iterations} iterations")]
    NoConvergence {
        function: &'static str,
        iterations: usize,
    },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

impl NumericsError {
    pub(crate) fn domain(function: &'static str, value: f64) -> Self {
        NumericsError::Domain { function, value }
    }
}

/// Complementary error function.
///
/// Positive-term series `erf(x) = 2/√π e^{-x²} Σ 2ⁿ x^{2n+1} / (2n+1)!!` below
/// 1.5 and the Laplace continued fraction above, both to full double precision.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    let two_over_sqrt_pi = std::f64::consts::FRAC_2_SQRT_PI;
    if x < 1.5 {
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term > 1e-17 * sum {
            n += 1.0;
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
        }
        return 1.0 - two_over_sqrt_pi * (-x2).exp() * sum;
    }
    if x > 27.3 {
        return 0.0;
    }
    // erfc(x) = e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..5000 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    0.5 * two_over_sqrt_pi * (-x * x).exp() / f
}

/// Upper tail `P(Z > z)` of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile (rational initial guess refined by Newton).
pub fn probit(q: f64) -> f64 {
    if q <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if q >= 1.0 {
        return f64::INFINITY;
    }
    // Acklam's rational approximation.
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
    let tail = |p: f64| {
        let r = (-2.0 * p.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    };
    let mut z = if q < 0.024_25 {
        tail(q)
    } else if q > 1.0 - 0.024_25 {
        -tail(1.0 - q)
    } else {
        let r = q - 0.5;
        let r2 = r * r;
        (((((A[0] * r2 + A[1]) * r2 + A[2]) * r2 + A[3]) * r2 + A[4]) * r2 + A[5]) * r
            / (((((B[0] * r2 + B[1]) * r2 + B[2]) * r2 + B[3]) * r2 + B[4]) * r2 + 1.0)
    };
    for _ in 0..3 {
        let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if density <= 0.0 {
            break;
        }
        // Work on whichever tail is small to keep relative accuracy.
        let err = if z < 0.0 {
            normal_sf(-z) - q
        } else {
            (1.0 - q) - normal_sf(z)
        };
        z -= err / density;
    }
    z
}

/// Two-sided normal p-value for a z statistic.
pub fn two_sided_normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((0.5 * x).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probit_inverts_normal_cdf() {
        for &q in &[1e-10, 0.025, 0.3, 0.5, 0.8, 0.975, 1.0 - 1e-9] {
            let z = probit(q);
            assert!((1.0 - normal_sf(z) - q).abs() < 1e-12, "q={q} z={z}");
        }
        assert!((probit(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn erfc_reference_values() {
        // scipy.special.erfc
        let cases = [
            (0.5, 0.479_500_122_186_953_5),
            (1.0, 0.157_299_207_050_285_16),
            (2.0, 0.004_677_734_981_047_266),
            (5.0, 1.537_459_794_428_034_7e-12),
            (10.0, 2.088_487_583_762_545e-45),
        ];
        for (x, v) in cases {
            assert!((erfc(x) - v).abs() <= 1e-14 * v, "x={x}: {} vs {v}", erfc(x));
        }
        assert!((erfc(-1.0) - (2.0 - 0.157_299_207_050_285_16)).abs() < 1e-15);
        assert_eq!(erfc(0.0), 1.0);
    }

    #[test]
    fn chi2_tail() {
        assert!((chi2_1_sf(3.841_458_820_694_124) - 0.05).abs() < 1e-12);
        assert_eq!(chi2_1_sf(0.0), 1.0);
    }
}
