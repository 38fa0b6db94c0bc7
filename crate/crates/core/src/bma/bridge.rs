//! Marginal likelihoods by iterative bridge sampling with a normal proposal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::mcmc::{ess_plain, Model, PosteriorDraws, RandomEffect};
use crate::numerics::linalg::{mean_and_covariance, Cholesky};
use crate::numerics::ln_sum_exp;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BridgeSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Seed of the proposal draws.
    pub seed: u64,
}

impl Default for BridgeSettings {
    fn default() -> Self {
        BridgeSettings { tolerance: 1e-10, max_iterations: 1000, seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BridgeEstimate {
    pub log_ml: f64,
    /// Approximate relative standard error of the marginal likelihood (also
    /// the standard error of `log_ml` to first order).
    pub relative_mc_error: f64,
    pub iterations: usize,
}

/// Per random effect: whether members are re-expressed as standardized
/// deviations `(η − location) / σ` before fitting the proposal.
#[derive(Debug, Clone)]
struct Chart {
    noncentered: Vec<RandomEffect>,
}

impl Chart {
    fn choose<M: Model + ?Sized>(model: &M, draws: &PosteriorDraws) -> Chart {
        let mut noncentered = Vec::new();
        for e in model.random_effects() {
            let mut ls: Vec<f64> = draws.unconstrained.rows().map(|r| r[e.log_scale]).collect();
            ls.sort_by(f64::total_cmp);
            let sigma = ls[ls.len() / 2].exp();
            let mut info = e.member_information.clone();
            info.sort_by(f64::total_cmp);
            let median_info = info.get(info.len() / 2).copied().unwrap_or(0.0);
            if median_info * sigma * sigma < 1.0 {
                noncentered.push(e);
            }
        }
        Chart { noncentered }
    }

    fn to_chart(&self, x: &mut [f64]) {
        for e in &self.noncentered {
            let s = x[e.log_scale].exp();
            for (i, &m) in e.members.iter().enumerate() {
                x[m] = (x[m] - e.member_location(x, i)) / s;
            }
        }
    }

    /// Maps back in place and returns `ln |∂x/∂y|`.
    fn from_chart(&self, y: &mut [f64]) -> f64 {
        let mut lj = 0.0;
        for e in &self.noncentered {
            let s = y[e.log_scale].exp();
            for (i, &m) in e.members.iter().enumerate() {
                y[m] = e.member_location(y, i) + s * y[m];
            }
            lj += e.members.len() as f64 * y[e.log_scale];
        }
        lj
    }
}

fn chart_log_density<M: Model + ?Sized>(model: &M, chart: &Chart, y: &[f64], buf: &mut [f64]) -> f64 {
    buf.copy_from_slice(y);
    let lj = chart.from_chart(buf);
    model.log_density(buf) + lj
}

struct Proposal {
    mean: Vec<f64>,
    chol: Cholesky,
    ln_norm: f64,
}

impl Proposal {
    fn ln_pdf(&self, y: &[f64]) -> f64 {
        let d: Vec<f64> = y.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut z = d;
        self.chol.solve_lower_in_place(&mut z);
        self.ln_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Bridge estimate of `ln ∫ exp(log_density)`. The first half of every
/// chain fits the proposal; the second half enters the bridge identity.
pub fn bridge_log_ml<M: Model + ?Sized>(model: &M, draws: &PosteriorDraws, settings: &BridgeSettings) -> Result<BridgeEstimate> {
    let dim = model.dim();
    if dim == 0 {
        return Ok(BridgeEstimate { log_ml: model.log_density(&[]), relative_mc_error: 0.0, iterations: 0 });
    }
    let u = &draws.unconstrained;
    if u.width() != dim {
        return Err(Error::InvalidArgument(format!("draws have {} columns, model has {dim}", u.width())));
    }
    let half = u.iters / 2;
    if half < 2 * dim.min(50) {
        return Err(Error::Estimation(format!("too few draws ({}) for bridge sampling in {dim} dimensions", u.iters)));
    }
    let chart = Chart::choose(model, draws);
    let mut fit = Vec::with_capacity(u.chains * half * dim);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(u.chains * (u.iters - half));
    let mut post_chain = Vec::with_capacity(u.chains * (u.iters - half));
    for c in 0..u.chains {
        for i in 0..u.iters {
            let mut y = u.row(c, i).to_vec();
            chart.to_chart(&mut y);
            if i < half {
                fit.extend_from_slice(&y);
            } else {
                post.push(y);
                post_chain.push(c);
            }
        }
    }
    let (mean, cov) = mean_and_covariance(&fit, dim);
    let chol = Cholesky::new_jittered(&cov, dim, 30)
        .map_err(|e| Error::Estimation(format!("proposal covariance: {e}")))?;
    let ln_norm = -0.5 * dim as f64 * LN_2PI - 0.5 * chol.ln_det();
    let proposal = Proposal { mean, chol, ln_norm };

    let n1 = post.len();
    let n2 = n1;
    let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
    let mut buf = vec![0.0; dim];
    let mut lz = vec![0.0; dim];
    let mut l1 = Vec::with_capacity(n1);
    for y in &post {
        l1.push(chart_log_density(model, &chart, y, &mut buf) - proposal.ln_pdf(y));
    }
    let mut l2 = Vec::with_capacity(n2);
    for _ in 0..n2 {
        let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        proposal.chol.mul_lower(&z, &mut lz);
        let y: Vec<f64> = proposal.mean.iter().zip(&lz).map(|(m, v)| m + v).collect();
        let q = chart_log_density(model, &chart, &y, &mut buf);
        l2.push(if q.is_nan() { f64::NEG_INFINITY } else { q - proposal.ln_pdf(&y) });
    }
    if l1.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation("posterior draw with non-finite density".into()));
    }
    let mut sorted = l1.clone();
    sorted.sort_by(f64::total_cmp);
    let lstar = sorted[n1 / 2];
    let s1 = n1 as f64 / (n1 + n2) as f64;
    let s2 = n2 as f64 / (n1 + n2) as f64;
    let (ls1, ls2) = (s1.ln(), s2.ln());
    let e1: Vec<f64> = l1.iter().map(|v| v - lstar).collect();
    let e2: Vec<f64> = l2.iter().map(|v| v - lstar).collect();

    // log r iteration on the shifted scale
    let mut log_r = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut num_terms = vec![0.0; n2];
    let mut den_terms = vec![0.0; n1];
    while iterations < settings.max_iterations {
        iterations += 1;
        for (t, &e) in num_terms.iter_mut().zip(&e2) {
            *t = e - ln_add(ls1 + e, ls2 + log_r);
        }
        for (t, &e) in den_terms.iter_mut().zip(&e1) {
            *t = -ln_add(ls1 + e, ls2 + log_r);
        }
        let next = ln_sum_exp(&num_terms) - (n2 as f64).ln() - (ln_sum_exp(&den_terms) - (n1 as f64).ln());
        if !next.is_finite() {
            return Err(Error::Estimation("bridge iteration diverged".into()));
        }
        let rel = (1.0 - (log_r - next).exp()).abs();
        log_r = next;
        if rel < settings.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Estimation(format!(
            "bridge fixed point not reached in {} iterations",
            settings.max_iterations
        )));
    }

    // Relative mean-squared error from both sampling distributions; the
    // posterior term uses the effective sample size of its summand.
    let f1: Vec<f64> = e2.iter().map(|&e| (e - log_r - ln_add(ls1 + e - log_r, ls2)).exp()).collect();
    let f2: Vec<f64> = e1.iter().map(|&e| (-ln_add(ls1 + e - log_r, ls2)).exp()).collect();
    let (m1, v1) = mean_var(&f1);
    let (m2, v2) = mean_var(&f2);
    let mut by_chain: Vec<Vec<f64>> = vec![Vec::new(); u.chains];
    for (v, &c) in f2.iter().zip(&post_chain) {
        by_chain[c].push(*v);
    }
    let ess = ess_plain(&by_chain).clamp(1.0, n1 as f64);
    let re2 = v1 / (m1 * m1) / n2 as f64 + v2 / (m2 * m2) / ess;
    Ok(BridgeEstimate { log_ml: log_r + lstar, relative_mc_error: re2.sqrt(), iterations })
}

fn ln_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}
