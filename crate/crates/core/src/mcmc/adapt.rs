//! Step-size and covariance adaptation for random-walk Metropolis blocks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::linalg::Cholesky;

/// Nesterov dual averaging of the log step size towards a target
/// acceptance rate.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    log_step: f64,
    log_step_bar: f64,
    h_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(step: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * step).ln(),
            log_step: step.ln(),
            log_step_bar: step.ln(),
            h_bar: 0.0,
            t: 0.0,
            target,
        }
    }

    pub fn update(&mut self, accept_prob: f64) {
        self.t += 1.0;
        let eta = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_prob);
        self.log_step = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let w = self.t.powf(-Self::KAPPA);
        self.log_step_bar = w * self.log_step + (1.0 - w) * self.log_step_bar;
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn final_step(&self) -> f64 {
        self.log_step_bar.exp()
    }
}

/// Running mean and covariance (Welford).
#[derive(Debug, Clone)]
pub struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Welford { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim * dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        let d = self.mean.len();
        self.n += 1;
        let n = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        for i in 0..d {
            let after_i = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[i * d + j] += delta[j] * after_i;
            }
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Sample covariance shrunk towards a small multiple of the identity.
    pub fn regularized_covariance(&self) -> Vec<f64> {
        let d = self.mean.len();
        let n = self.n as f64;
        let mut c: Vec<f64> = self.m2.iter().map(|v| v / (n - 1.0).max(1.0)).collect();
        let w = n / (n + 5.0);
        for v in c.iter_mut() {
            *v *= w;
        }
        for i in 0..d {
            c[i * d + i] += 1e-3 * (1.0 - w) * c[i * d + i].abs().max(1e-10) + 1e-12;
        }
        c
    }
}

fn default_target(dim: usize) -> f64 {
    match dim {
        1 => 0.44,
        2..=3 => 0.35,
        4..=6 => 0.3,
        _ => 0.234,
    }
}

/// A random-walk Metropolis block with a multivariate-normal proposal whose
/// shape is learned in doubling windows during warmup and whose scale is
/// tuned by dual averaging.
#[derive(Debug, Clone)]
pub struct AdaptiveRwm {
    dim: usize,
    chol: Cholesky,
    da: DualAveraging,
    step: f64,
    window: Welford,
    window_end: usize,
    warmup: usize,
    accepted: u64,
    proposed: u64,
}

impl AdaptiveRwm {
    /// `scales` are rough posterior standard deviations of the block's
    /// coordinates.
    pub fn new(scales: &[f64], warmup: usize) -> Self {
        let dim = scales.len();
        let mut cov = vec![0.0; dim * dim];
        for (i, s) in scales.iter().enumerate() {
            let s = if s.is_finite() && *s > 0.0 { *s } else { 1.0 };
            cov[i * dim + i] = s * s;
        }
        let chol = Cholesky::new_jittered(&cov, dim, 30).expect("diagonal proposal");
        let step = 2.38 / (dim as f64).sqrt();
        AdaptiveRwm {
            dim,
            chol,
            da: DualAveraging::new(step, default_target(dim)),
            step,
            window: Welford::new(dim),
            window_end: Self::first_window_end(warmup),
            warmup,
            accepted: 0,
            proposed: 0,
        }
    }

    fn first_window_end(warmup: usize) -> usize {
        (warmup / 8).max(25)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Proposal `x + step · L z` written into `out`.
    pub fn propose<R: Rng + ?Sized>(&self, x: &[f64], out: &mut [f64], rng: &mut R) {
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut lz = vec![0.0; self.dim];
        self.chol.mul_lower(&z, &mut lz);
        for i in 0..self.dim {
            out[i] = x[i] + self.step * lz[i];
        }
    }

    /// Metropolis decision from the log-density difference; records the
    /// acceptance and returns whether to accept.
    pub fn decide<R: Rng + ?Sized>(&mut self, log_ratio: f64, rng: &mut R) -> (bool, f64) {
        let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
        let u: f64 = rng.random();
        let accept = u < accept_prob;
        self.proposed += 1;
        self.accepted += accept as u64;
        (accept, accept_prob)
    }

    /// Warmup bookkeeping after a transition at iteration `it`, with `x` the
    /// block's state after the transition.
    pub fn adapt(&mut self, it: usize, accept_prob: f64, x: &[f64]) {
        if it >= self.warmup {
            return;
        }
        self.da.update(accept_prob);
        self.step = self.da.step();
        let shape_phase_end = self.warmup * 9 / 10;
        if it < shape_phase_end && self.warmup >= 100 {
            self.window.push(x);
            if it + 1 == self.window_end {
                if self.window.count() > 2 * self.dim + 5 {
                    let cov = self.window.regularized_covariance();
                    if let Ok(c) = Cholesky::new_jittered(&cov, self.dim, 30) {
                        self.chol = c;
                        let s = 2.38 / (self.dim as f64).sqrt();
                        self.da = DualAveraging::new(s, default_target(self.dim));
                        self.step = s;
                    }
                }
                self.window = Welford::new(self.dim);
                let len = (self.window_end * 2).max(self.window_end + 25);
                self.window_end = if len >= shape_phase_end { shape_phase_end } else { len };
            }
        }
        if it + 1 == self.warmup {
            self.step = self.da.final_step();
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn reset_counts(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }
}
