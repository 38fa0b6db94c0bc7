//! Maximum-likelihood logistic model of the same-side indicator with a
//! per-person random intercept, integrated by adaptive Gauss–Hermite
//! quadrature.

use serde::Serialize;

use crate::data::{Cells, Side};
use crate::numerics::optimize::{bfgs_minimize, hessian};
use crate::numerics::linalg::Cholesky;
use crate::numerics::{chi2_1_sf, gauss_hermite, ln_sigmoid, logit, two_sided_normal_p, QuadratureRule};
use crate::{Error, Result};

pub const QUADRATURE_NODES: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlmmFit {
    /// Intercept on the logit scale (average over starting sides).
    pub b_mu: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    /// Random-intercept standard deviation.
    pub tau: f64,
    pub log_likelihood: f64,
    /// Likelihood-ratio statistic against the fit without random intercept.
    pub lr_chi2: f64,
    pub lr_p: f64,
    /// Heads-start minus tails-start difference on the logit scale.
    pub b_start: f64,
    pub se_start: f64,
    pub p_start: f64,
    pub iterations: usize,
}

/// Same-side counts per person and starting side; `x` is +½ for heads
/// starts and −½ for tails starts.
#[derive(Debug, Clone)]
struct Group {
    rows: Vec<(f64, f64, f64)>,
}

fn groups(cells: &Cells) -> Vec<Group> {
    let mut acc = vec![[(0u64, 0u64); 2]; cells.persons.len()];
    for c in &cells.cells {
        let s = (c.start == Side::Tails) as usize;
        acc[c.person][s].0 += c.n_same;
        acc[c.person][s].1 += c.n_trials;
    }
    acc.into_iter()
        .filter(|a| a[0].1 + a[1].1 > 0)
        .map(|a| Group {
            rows: [(0.5, a[0]), (-0.5, a[1])]
                .into_iter()
                .filter(|(_, (_, n))| *n > 0)
                .map(|(x, (y, n))| (x, y as f64, n as f64))
                .collect(),
        })
        .collect()
}

fn group_ll(g: &Group, b0: f64, b1: f64, u: f64) -> f64 {
    g.rows
        .iter()
        .map(|&(x, y, n)| {
            let eta = b0 + b1 * x + u;
            y * ln_sigmoid(eta) + (n - y) * ln_sigmoid(-eta)
        })
        .sum()
}

/// `ln ∫ L_k(u) N(u; 0, τ²) du` with nodes centred at the mode of the
/// integrand and scaled by its curvature.
fn group_marginal(g: &Group, b0: f64, b1: f64, tau: f64, rule: &QuadratureRule) -> f64 {
    let prec = 1.0 / (tau * tau);
    let mut u = 0.0;
    let mut curv = prec;
    for _ in 0..50 {
        let mut d1 = -u * prec;
        let mut d2 = -prec;
        for &(x, y, n) in &g.rows {
            let p = crate::numerics::inv_logit(b0 + b1 * x + u);
            d1 += y - n * p;
            d2 -= n * p * (1.0 - p);
        }
        let step = d1 / d2;
        u -= step;
        curv = -d2;
        if step.abs() < 1e-12 * (1.0 + u.abs()) {
            break;
        }
    }
    let s = (1.0 / curv).sqrt();
    let ln_norm = -0.5 * (2.0 * std::f64::consts::PI).ln() - tau.ln();
    let terms: Vec<f64> = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&z, &w)| {
            let v = u + std::f64::consts::SQRT_2 * s * z;
            w.ln() + z * z + group_ll(g, b0, b1, v) - 0.5 * v * v * prec
        })
        .collect();
    ln_norm + (std::f64::consts::SQRT_2 * s).ln() + crate::numerics::ln_sum_exp(&terms)
}

fn marginal_ll(groups: &[Group], theta: &[f64], rule: &QuadratureRule) -> f64 {
    let tau = theta[2].exp();
    groups.iter().map(|g| group_marginal(g, theta[0], theta[1], tau, rule)).sum()
}

fn glm_ll(groups: &[Group], b: &[f64]) -> f64 {
    groups.iter().map(|g| group_ll(g, b[0], b[1], 0.0)).sum()
}

/// Standard errors from the inverse of the observed information.
fn standard_errors(neg_ll: &impl Fn(&[f64]) -> f64, x: &[f64], k: usize) -> Option<Vec<f64>> {
    let h = hessian(neg_ll, x);
    let n = x.len();
    let sub: Vec<f64> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| h[i * n + j]).collect();
    let full = Cholesky::new(&h, n).ok().map(|c| c.inverse());
    let inv = match full {
        Some(inv) => (0..k).map(|i| inv[i * n + i]).collect::<Vec<_>>(),
        None => {
            let c = Cholesky::new(&sub, k).ok()?;
            let inv = c.inverse();
            (0..k).map(|i| inv[i * k + i]).collect()
        }
    };
    Some(inv.into_iter().map(f64::sqrt).collect())
}

pub fn ml_fit_random_intercept(cells: &Cells) -> Result<GlmmFit> {
    let groups = groups(cells);
    if groups.len() < 2 {
        return Err(Error::InvalidArgument("random-intercept fit needs at least two persons".into()));
    }
    let rule = gauss_hermite(QUADRATURE_NODES)?;
    let n = cells.n_trials() as f64;
    let b0 = logit((cells.n_same() as f64 + 0.5) / (n + 1.0));

    let neg_glm = |b: &[f64]| -glm_ll(&groups, b);
    let glm = bfgs_minimize(neg_glm, &[b0, 0.0], 1e-6, 500)
        .map_err(|e| Error::Estimation(format!("GLM fit: {e}")))?;

    let neg = |t: &[f64]| -marginal_ll(&groups, t, &rule);
    let mut best = None;
    for start in [0.05f64, 0.2, 0.01] {
        let x0 = [glm.x[0], glm.x[1], start.ln()];
        match bfgs_minimize(neg, &x0, 1e-5, 1000) {
            Ok(m) if best.as_ref().is_none_or(|b: &crate::numerics::optimize::Minimum| m.value < b.value) => {
                best = Some(m)
            }
            Ok(_) => {}
            Err(e) => {
                if best.is_none() && start == 0.01 {
                    return Err(Error::Estimation(format!("random-intercept fit: {e}")));
                }
            }
        }
    }
    let m = best.ok_or_else(|| Error::Estimation("random-intercept fit did not converge".into()))?;
    let ll1 = -m.value;
    let ll0 = -glm.value;
    let se = standard_errors(&neg, &m.x, 2)
        .ok_or_else(|| Error::Estimation("observed information is not positive definite".into()))?;
    let lr = (2.0 * (ll1 - ll0)).max(0.0);
    let z = m.x[0] / se[0];
    Ok(GlmmFit {
        b_mu: m.x[0],
        se: se[0],
        z,
        p: two_sided_normal_p(z),
        tau: m.x[2].exp(),
        log_likelihood: ll1,
        lr_chi2: lr,
        lr_p: chi2_1_sf(lr),
        b_start: m.x[1],
        se_start: se[1],
        p_start: two_sided_normal_p(m.x[1] / se[1]),
        iterations: m.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AggregateCell;
    use crate::numerics::{integrate, IntegrationOptions};

    fn cells_from(rows: &[(u64, u64, u64, u64)]) -> Cells {
        // (same_h, n_h, same_t, n_t) per person
        let mut cells = Vec::new();
        for (k, &(sh, nh, st, nt)) in rows.iter().enumerate() {
            // n_same for heads starts = heads; for tails starts = tails
            cells.push(AggregateCell::new(0, k, Side::Heads, nh, sh));
            cells.push(AggregateCell::new(0, k, Side::Tails, nt, nt - st));
        }
        Cells::new(
            (0..rows.len()).map(|k| format!("p{k}")).collect(),
            vec!["c".into()],
            vec!["s".into(); rows.len()],
            cells,
        )
        .unwrap()
    }

    #[test]
    fn quadrature_matches_adaptive_integration() {
        let g = Group { rows: vec![(0.5, 260.0, 500.0), (-0.5, 240.0, 480.0)] };
        let rule = gauss_hermite(QUADRATURE_NODES).unwrap();
        for tau in [0.01, 0.1, 0.5] {
            let agq = group_marginal(&g, 0.05, 0.02, tau, &rule);
            let shift = group_ll(&g, 0.05, 0.02, 0.0);
            let f = |u: f64| {
                (group_ll(&g, 0.05, 0.02, u) - shift - 0.5 * (u / tau).powi(2)).exp() / (tau * (2.0 * std::f64::consts::PI).sqrt())
            };
            let direct = integrate(f, &[-5.0, -0.2, 0.0, 0.2, 5.0], IntegrationOptions::default()).unwrap().value.ln() + shift;
            assert!((agq - direct).abs() < 1e-8, "τ={tau}: {agq} vs {direct}");
        }
    }

    #[test]
    fn homogeneous_persons_give_small_tau() {
        let rows: Vec<_> = (0..20).map(|_| (250, 500, 250, 500)).collect();
        let fit = ml_fit_random_intercept(&cells_from(&rows)).unwrap();
        assert!(fit.tau < 0.01, "{fit:?}");
        assert!(fit.lr_chi2 < 1e-3);
        assert!(fit.b_mu.abs() < 1e-4);
    }

    #[test]
    fn heterogeneous_persons_detected() {
        let rows: Vec<_> = (0..20)
            .map(|k| {
                let h = 2000 + 40 * (k as u64 % 5) * 10;
                (h / 2, 2000, h / 2, 2000)
            })
            .collect();
        let fit = ml_fit_random_intercept(&cells_from(&rows)).unwrap();
        assert!(fit.tau > 0.1 && fit.lr_chi2 > 50.0, "{fit:?}");
        assert!(fit.p < 1e-3);
    }
}
