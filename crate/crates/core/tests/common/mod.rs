//! Models with closed-form marginal likelihoods, used as oracles for the
//! sampler and the bridge estimator.
#![allow(dead_code)]

use std::ops::Range;

use coinflip::mcmc::Model;
use coinflip::numerics::{inv_logit, ln_sigmoid, log_beta, log_gamma};
use rand::RngCore;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Binomial count with a Beta(a, b) prior, sampled on the logit.
pub struct BetaBinomial {
    pub k: f64,
    pub n: f64,
    pub a: f64,
    pub b: f64,
}

impl BetaBinomial {
    pub fn analytic(&self) -> f64 {
        log_beta(self.a + self.k, self.b + self.n - self.k).unwrap() - log_beta(self.a, self.b).unwrap()
    }
}

impl Model for BetaBinomial {
    fn dim(&self) -> usize {
        1
    }
    fn names(&self) -> Vec<String> {
        vec!["logit_p".into()]
    }
    fn n_globals(&self) -> usize {
        1
    }
    fn units(&self) -> Vec<Range<usize>> {
        Vec::new()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (self.a + self.k) * ln_sigmoid(x[0]) + (self.b + self.n - self.k) * ln_sigmoid(-x[0]) - log_beta(self.a, self.b).unwrap()
    }
    fn scales(&self) -> Vec<f64> {
        vec![(4.0 / (self.n + self.a + self.b)).sqrt()]
    }
    fn initial(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0]
    }
    fn natural_names(&self) -> Vec<String> {
        vec!["p".into()]
    }
    fn to_natural(&self, x: &[f64]) -> Vec<f64> {
        vec![inv_logit(x[0])]
    }
}

/// `y_i ~ N(u_i, s²)`, `u_i ~ N(μ, τ²)`, `μ ~ N(m0, v0)` with `s`, `τ`
/// known. Each `u_i` is its own unit block.
pub struct NormalHierarchy {
    pub y: Vec<f64>,
    pub s: f64,
    pub tau: f64,
    pub m0: f64,
    pub v0: f64,
}

fn ln_normal(x: f64, m: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * ((x - m) / sd).powi(2)
}

impl NormalHierarchy {
    pub fn analytic(&self) -> f64 {
        let m = self.y.len() as f64;
        let c = self.s * self.s + self.tau * self.tau;
        let r: Vec<f64> = self.y.iter().map(|y| y - self.m0).collect();
        let sum: f64 = r.iter().sum();
        let sq: f64 = r.iter().map(|v| v * v).sum();
        let quad = (sq - self.v0 * sum * sum / (c + m * self.v0)) / c;
        let ln_det = m * c.ln() + (1.0 + m * self.v0 / c).ln();
        -0.5 * (m * LN_2PI + ln_det + quad)
    }
}

impl Model for NormalHierarchy {
    fn dim(&self) -> usize {
        self.y.len() + 1
    }
    fn names(&self) -> Vec<String> {
        std::iter::once("mu".to_string()).chain((0..self.y.len()).map(|i| format!("u[{i}]"))).collect()
    }
    fn n_globals(&self) -> usize {
        1
    }
    fn units(&self) -> Vec<Range<usize>> {
        (1..=self.y.len()).map(|i| i..i + 1).collect()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        let mu = x[0];
        ln_normal(mu, self.m0, self.v0.sqrt())
            + self
                .y
                .iter()
                .zip(&x[1..])
                .map(|(&y, &u)| ln_normal(u, mu, self.tau) + ln_normal(y, u, self.s))
                .sum::<f64>()
    }
    fn log_density_unit(&self, x: &[f64], u: usize) -> f64 {
        ln_normal(x[u + 1], x[0], self.tau) + ln_normal(self.y[u], x[u + 1], self.s)
    }
    fn scales(&self) -> Vec<f64> {
        let post = 1.0 / (1.0 / (self.s * self.s) + 1.0 / (self.tau * self.tau));
        std::iter::once((self.tau * self.tau / self.y.len() as f64).sqrt()).chain(std::iter::repeat_n(post.sqrt(), self.y.len())).collect()
    }
    fn initial(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        let mean = self.y.iter().sum::<f64>() / self.y.len() as f64;
        std::iter::once(mean).chain(self.y.iter().copied()).collect()
    }
    fn natural_names(&self) -> Vec<String> {
        vec!["mu".into()]
    }
    fn to_natural(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0]]
    }
}

/// `y_i ~ N(0, σ²)` with `σ² ~ InvGamma(a, b)`, sampled on `ln σ`.
pub struct NormalVariance {
    pub y: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl NormalVariance {
    pub fn analytic(&self) -> f64 {
        let m = self.y.len() as f64;
        let ss: f64 = self.y.iter().map(|v| v * v).sum();
        let (a1, b1) = (self.a + m / 2.0, self.b + ss / 2.0);
        -0.5 * m * LN_2PI + self.a * self.b.ln() - log_gamma(self.a).unwrap() + log_gamma(a1).unwrap() - a1 * b1.ln()
    }
}

impl Model for NormalVariance {
    fn dim(&self) -> usize {
        1
    }
    fn names(&self) -> Vec<String> {
        vec!["log_sigma".into()]
    }
    fn n_globals(&self) -> usize {
        1
    }
    fn units(&self) -> Vec<Range<usize>> {
        Vec::new()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        let v = (2.0 * x[0]).exp();
        let m = self.y.len() as f64;
        let ss: f64 = self.y.iter().map(|y| y * y).sum();
        // InvGamma density of v, with Jacobian dv/d ln σ = 2v
        let prior = self.a * self.b.ln() - log_gamma(self.a).unwrap() - (self.a + 1.0) * v.ln() - self.b / v + (2.0 * v).ln();
        prior - 0.5 * m * (LN_2PI + v.ln()) - ss / (2.0 * v)
    }
    fn scales(&self) -> Vec<f64> {
        vec![(0.5 / self.y.len() as f64).sqrt()]
    }
    fn initial(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        let ss: f64 = self.y.iter().map(|y| y * y).sum::<f64>() / self.y.len() as f64;
        vec![0.5 * ss.ln()]
    }
    fn natural_names(&self) -> Vec<String> {
        vec!["sigma".into()]
    }
    fn to_natural(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0].exp()]
    }
}
