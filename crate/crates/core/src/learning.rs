//! Power-law learning curve for the same-side bias.
//!
//! A flip of person `k` with coin `j` starting on side `s` at scaled toss
//! index `t` lands heads with log-odds
//! `logit α_j + s · (logit θ_k + logit λ_k · t^ρ_k)`.
//! `θ` is the baseline same-side probability, `λ` the toss-order dependent
//! part and `ρ` the learning exponent. Flips are aggregated into batches of
//! consecutive flips by the same person with the same coin.

use std::io::Write;
use std::ops::Range;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{AggregateCell, Cells, FlipDataset, Side};
use crate::hier::{normal_offsets_ln_pdf, LocationPrior, ScalePrior};
use crate::mcmc::{self, quantile_sorted, Estimate, Model, PosteriorDraws, RandomEffect, Settings};
use crate::numerics::{inv_logit, ln_sigmoid, logit};
use crate::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 100;
pub const T_SCALE: f64 = 1000.0;
pub const T_FLOOR: f64 = 1e-6;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Batch {
    pub person: usize,
    pub coin: usize,
    /// Mean flip index of the batch divided by 1000.
    pub t: f64,
    pub n_h: u64,
    pub h_h: u64,
    pub n_t: u64,
    pub h_t: u64,
}

impl Batch {
    pub fn len(&self) -> u64 {
        self.n_h + self.n_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_same(&self) -> u64 {
        self.h_h + (self.n_t - self.h_t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Batches {
    pub persons: Vec<String>,
    pub coins: Vec<String>,
    pub person_sites: Vec<String>,
    pub batches: Vec<Batch>,
}

impl Batches {
    pub fn n_flips(&self) -> u64 {
        self.batches.iter().map(Batch::len).sum()
    }

    /// The batches as start-side cells (time ignored).
    pub fn to_cells(&self) -> Result<Cells> {
        let cells = self
            .batches
            .iter()
            .flat_map(|b| {
                [
                    AggregateCell::new(b.coin, b.person, Side::Heads, b.n_h, b.h_h),
                    AggregateCell::new(b.coin, b.person, Side::Tails, b.n_t, b.h_t),
                ]
            })
            .filter(|c| c.n_trials > 0)
            .collect();
        Cells::new(self.persons.clone(), self.coins.clone(), self.person_sites.clone(), cells)
    }
}

/// Chunks every run of consecutive flips by the same person with the same
/// coin into batches of `target_size`, keeping a final short chunk.
pub fn make_batches(d: &FlipDataset, target_size: usize) -> Result<Batches> {
    make_batches_from(d, target_size, 0.0)
}

/// As [`make_batches`] with `t = origin + mean(flip_index) / 1000`. An origin
/// of 1 puts the first flip at `t^ρ = 1`.
pub fn make_batches_from(d: &FlipDataset, target_size: usize, origin: f64) -> Result<Batches> {
    if !(origin >= 0.0 && origin.is_finite()) {
        return Err(Error::InvalidArgument(format!("time origin must be finite and non-negative, got {origin}")));
    }
    if target_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut batches = Vec::new();
    let mut current: Option<(Batch, u64, usize)> = None;
    let close = |(mut b, sum, _): (Batch, u64, usize), out: &mut Vec<Batch>| {
        b.t = (origin + sum as f64 / b.len() as f64 / T_SCALE).max(T_FLOOR);
        out.push(b);
    };
    for f in d.flips() {
        let (person, coin) = (f.person as usize, f.coin as usize);
        let continues = matches!(&current, Some((b, _, n)) if b.person == person && b.coin == coin && *n < target_size);
        if !continues {
            if let Some(c) = current.take() {
                close(c, &mut batches);
            }
            current = Some((Batch { person, coin, t: 0.0, n_h: 0, h_h: 0, n_t: 0, h_t: 0 }, 0, 0));
        }
        let (b, sum, n) = current.as_mut().expect("open batch");
        let heads = f.is_heads() as u64;
        match f.start {
            Side::Heads => {
                b.n_h += 1;
                b.h_h += heads;
            }
            Side::Tails => {
                b.n_t += 1;
                b.h_t += heads;
            }
        }
        *sum += f.flip_index;
        *n += 1;
    }
    if let Some(c) = current {
        close(c, &mut batches);
    }
    Ok(Batches {
        persons: d.persons().to_vec(),
        coins: d.coins().to_vec(),
        person_sites: d.person_sites(),
        batches,
    })
}

/// Natural-scale parameters; offsets are on the logit scale (and on the
/// raw scale for `ρ`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningParams {
    pub alpha_mu: f64,
    pub theta_mu: f64,
    pub lambda_mu: f64,
    pub rho_mu: f64,
    pub gamma_alpha: Vec<f64>,
    pub gamma_theta: Vec<f64>,
    pub gamma_lambda: Vec<f64>,
    pub gamma_rho: Vec<f64>,
    pub sigma_alpha: f64,
    pub sigma_theta: f64,
    pub sigma_lambda: f64,
    pub sigma_rho: f64,
}

impl LearningParams {
    pub fn constant(n_coins: usize, n_persons: usize, alpha: f64, theta: f64, lambda: f64, rho: f64) -> Self {
        LearningParams {
            alpha_mu: alpha,
            theta_mu: theta,
            lambda_mu: lambda,
            rho_mu: rho,
            gamma_alpha: vec![0.0; n_coins],
            gamma_theta: vec![0.0; n_persons],
            gamma_lambda: vec![0.0; n_persons],
            gamma_rho: vec![0.0; n_persons],
            sigma_alpha: 0.0,
            sigma_theta: 0.0,
            sigma_lambda: 0.0,
            sigma_rho: 0.0,
        }
    }
}

/// Same-side log-odds at scaled toss index `t`.
#[inline]
pub fn same_side_logit(logit_theta: f64, logit_lambda: f64, rho: f64, t: f64) -> f64 {
    logit_theta + logit_lambda * t.max(T_FLOOR).powf(rho)
}

#[inline]
fn batch_ll(b: &Batch, a: f64, same: f64) -> f64 {
    let term = |n: u64, h: u64, mu: f64| n as f64 * ln_sigmoid(mu) - (n - h) as f64 * mu;
    term(b.n_h, b.h_h, a + same) + term(b.n_t, b.h_t, a - same)
}

pub fn log_likelihood_learning(p: &LearningParams, data: &Batches) -> Result<f64> {
    let (nc, np) = (data.coins.len(), data.persons.len());
    if p.gamma_alpha.len() != nc || [&p.gamma_theta, &p.gamma_lambda, &p.gamma_rho].iter().any(|g| g.len() != np) {
        return Err(Error::InvalidArgument(format!("offsets do not match {nc} coins and {np} persons")));
    }
    let (la, lt, ll) = (logit(p.alpha_mu), logit(p.theta_mu), logit(p.lambda_mu));
    let mut total = 0.0;
    for b in &data.batches {
        let k = b.person;
        let same = same_side_logit(lt + p.gamma_theta[k], ll + p.gamma_lambda[k], p.rho_mu + p.gamma_rho[k], b.t);
        let a = la + p.gamma_alpha[b.coin];
        if !(a + same).is_finite() || !(a - same).is_finite() {
            return Err(Error::Estimation(format!("non-finite log-odds in batch of person {k} at t = {}", b.t)));
        }
        total += batch_ll(b, a, same);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningPriors {
    pub alpha_mu: LocationPrior,
    pub theta_mu: LocationPrior,
    pub lambda_mu: LocationPrior,
    pub rho_mu_mean: f64,
    pub rho_mu_sd: f64,
    pub sigma_alpha: ScalePrior,
    pub sigma_theta: ScalePrior,
    pub sigma_lambda: ScalePrior,
    pub sigma_rho: ScalePrior,
}

impl Default for LearningPriors {
    fn default() -> Self {
        let loc = LocationPrior::Beta { a: 312.0, b: 312.0 };
        let hn = ScalePrior::HalfNormal { sd: 0.04 };
        LearningPriors {
            alpha_mu: loc,
            theta_mu: loc,
            lambda_mu: loc,
            rho_mu_mean: 0.0,
            rho_mu_sd: 10.0,
            sigma_alpha: hn,
            sigma_theta: hn,
            sigma_lambda: hn,
            sigma_rho: ScalePrior::HalfNormal { sd: 1.0 },
        }
    }
}

impl LearningPriors {
    pub fn validate(&self) -> Result<()> {
        self.alpha_mu.validate()?;
        self.theta_mu.validate()?;
        self.lambda_mu.validate()?;
        for s in [self.sigma_alpha, self.sigma_theta, self.sigma_lambda, self.sigma_rho] {
            s.validate()?;
        }
        if !(self.rho_mu_sd > 0.0 && self.rho_mu_mean.is_finite()) {
            return Err(Error::DegeneratePrior(format!("rho_mu ~ N({}, {})", self.rho_mu_mean, self.rho_mu_sd)));
        }
        Ok(())
    }
}

// Global coordinates.
const A: usize = 0;
const TH: usize = 1;
const LA: usize = 2;
const RH: usize = 3;
const LS_A: usize = 4;
const LS_TH: usize = 5;
const LS_LA: usize = 6;
const LS_RH: usize = 7;
const N_GLOBALS: usize = 8;

pub const NATURAL_NAMES: [&str; 11] = [
    "alpha_mu",
    "theta_mu",
    "lambda_mu",
    "rho_mu",
    "sigma_alpha",
    "sigma_theta",
    "sigma_lambda",
    "sigma_rho",
    "initial",
    "sd_people_baseline",
    "sd_people_toss_order",
];

/// Centered parameterization: the eight globals
/// `[logit α_μ, logit θ_μ, logit λ_μ, ρ_μ, ln σ_α, ln σ_θ, ln σ_λ, ln σ_ρ]`,
/// then `logit α_j` per coin, then `(logit θ_k, logit λ_k, ρ_k)` per person.
#[derive(Debug, Clone)]
pub struct LearningModel {
    pub priors: LearningPriors,
    data: Batches,
    by_coin: Vec<Vec<usize>>,
    by_person: Vec<Vec<usize>>,
}

impl LearningModel {
    pub fn new(priors: LearningPriors, data: &Batches) -> Result<Self> {
        priors.validate()?;
        if data.batches.is_empty() {
            return Err(Error::InvalidArgument("no batches".into()));
        }
        let mut by_coin = vec![Vec::new(); data.coins.len()];
        let mut by_person = vec![Vec::new(); data.persons.len()];
        for (i, b) in data.batches.iter().enumerate() {
            by_coin[b.coin].push(i);
            by_person[b.person].push(i);
        }
        Ok(LearningModel { priors, data: data.clone(), by_coin, by_person })
    }

    pub fn data(&self) -> &Batches {
        &self.data
    }

    fn coin_start(&self) -> usize {
        N_GLOBALS
    }

    fn person_start(&self) -> usize {
        N_GLOBALS + self.data.coins.len()
    }

    #[inline]
    fn batch_term(&self, x: &[f64], b: &Batch) -> f64 {
        let p = self.person_start() + 3 * b.person;
        let same = same_side_logit(x[p], x[p + 1], x[p + 2], b.t);
        batch_ll(b, x[self.coin_start() + b.coin], same)
    }

    fn likelihood(&self, x: &[f64]) -> f64 {
        self.data.batches.iter().map(|b| self.batch_term(x, b)).sum()
    }

    fn hyperpriors(&self, x: &[f64]) -> f64 {
        let pr = &self.priors;
        let z = (x[RH] - pr.rho_mu_mean) / pr.rho_mu_sd;
        let mut lp = pr.alpha_mu.ln_pdf_logit(x[A])
            + pr.theta_mu.ln_pdf_logit(x[TH])
            + pr.lambda_mu.ln_pdf_logit(x[LA])
            + (-LN_SQRT_2PI - pr.rho_mu_sd.ln() - 0.5 * z * z);
        for (i, s) in [(LS_A, pr.sigma_alpha), (LS_TH, pr.sigma_theta), (LS_LA, pr.sigma_lambda), (LS_RH, pr.sigma_rho)] {
            lp += s.ln_pdf(x[i].exp()) + x[i];
        }
        lp
    }

    fn effect_terms(&self, x: &[f64]) -> f64 {
        let cs = self.coin_start();
        let ps = self.person_start();
        let np = self.data.persons.len();
        let coins: Vec<f64> = x[cs..ps].iter().map(|v| v - x[A]).collect();
        let mut lp = normal_offsets_ln_pdf(&coins, x[LS_A].exp());
        for (d, (loc, ls)) in [(x[TH], LS_TH), (x[LA], LS_LA), (x[RH], LS_RH)].into_iter().enumerate() {
            let offs: Vec<f64> = (0..np).map(|k| x[ps + 3 * k + d] - loc).collect();
            lp += normal_offsets_ln_pdf(&offs, x[ls].exp());
        }
        lp
    }

    pub fn params(&self, x: &[f64]) -> LearningParams {
        let cs = self.coin_start();
        let ps = self.person_start();
        let np = self.data.persons.len();
        LearningParams {
            alpha_mu: inv_logit(x[A]),
            theta_mu: inv_logit(x[TH]),
            lambda_mu: inv_logit(x[LA]),
            rho_mu: x[RH],
            gamma_alpha: x[cs..ps].iter().map(|v| v - x[A]).collect(),
            gamma_theta: (0..np).map(|k| x[ps + 3 * k] - x[TH]).collect(),
            gamma_lambda: (0..np).map(|k| x[ps + 3 * k + 1] - x[LA]).collect(),
            gamma_rho: (0..np).map(|k| x[ps + 3 * k + 2] - x[RH]).collect(),
            sigma_alpha: x[LS_A].exp(),
            sigma_theta: x[LS_TH].exp(),
            sigma_lambda: x[LS_LA].exp(),
            sigma_rho: x[LS_RH].exp(),
        }
    }
}

impl Model for LearningModel {
    fn dim(&self) -> usize {
        self.person_start() + 3 * self.data.persons.len()
    }

    fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            "logit_alpha_mu",
            "logit_theta_mu",
            "logit_lambda_mu",
            "rho_mu",
            "log_sigma_alpha",
            "log_sigma_theta",
            "log_sigma_lambda",
            "log_sigma_rho",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        names.extend(self.data.coins.iter().map(|c| format!("logit_alpha[{c}]")));
        for p in &self.data.persons {
            names.push(format!("logit_theta[{p}]"));
            names.push(format!("logit_lambda[{p}]"));
            names.push(format!("rho[{p}]"));
        }
        names
    }

    fn n_globals(&self) -> usize {
        N_GLOBALS
    }

    fn units(&self) -> Vec<Range<usize>> {
        let cs = self.coin_start();
        let ps = self.person_start();
        (cs..ps).map(|i| i..i + 1).chain((0..self.data.persons.len()).map(|k| ps + 3 * k..ps + 3 * k + 3)).collect()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let lp = self.hyperpriors(x);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.effect_terms(x) + self.likelihood(x)
    }

    fn log_density_globals(&self, x: &[f64]) -> f64 {
        let lp = self.hyperpriors(x);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.effect_terms(x)
    }

    fn log_density_unit(&self, x: &[f64], u: usize) -> f64 {
        let nc = self.data.coins.len();
        let (mut lp, ids) = if u < nc {
            let v = x[self.coin_start() + u];
            (-0.5 * ((v - x[A]) / x[LS_A].exp()).powi(2), &self.by_coin[u])
        } else {
            let k = u - nc;
            let p = self.person_start() + 3 * k;
            let lp = [(TH, LS_TH), (LA, LS_LA), (RH, LS_RH)]
                .iter()
                .enumerate()
                .map(|(d, &(loc, ls))| -0.5 * ((x[p + d] - x[loc]) / x[ls].exp()).powi(2))
                .sum();
            (lp, &self.by_person[k])
        };
        for &i in ids {
            lp += self.batch_term(x, &self.data.batches[i]);
        }
        lp
    }

    fn random_effects(&self) -> Vec<RandomEffect> {
        let cs = self.coin_start();
        let ps = self.person_start();
        let np = self.data.persons.len();
        let mut coin_n = vec![0.0; self.data.coins.len()];
        let mut person_n = vec![0.0; np];
        for b in &self.data.batches {
            coin_n[b.coin] += b.len() as f64 / 4.0;
            person_n[b.person] += b.len() as f64 / 4.0;
        }
        let mut out = vec![RandomEffect {
            name: "coin".into(),
            location: Some(A),
            location_value: 0.0,
            log_scale: LS_A,
            members: (cs..ps).collect(),
            member_information: coin_n,
            member_terms: Vec::new(),
        }];
        for (d, (name, loc, ls)) in [("theta", TH, LS_TH), ("lambda", LA, LS_LA), ("rho", RH, LS_RH)].into_iter().enumerate() {
            out.push(RandomEffect {
                name: name.into(),
                location: Some(loc),
                location_value: 0.0,
                log_scale: ls,
                members: (0..np).map(|k| ps + 3 * k + d).collect(),
                member_information: if d == 0 { person_n.clone() } else { vec![1.0; np] },
                member_terms: Vec::new(),
            });
        }
        out
    }

    fn joint_location_shift(&self) -> bool {
        true
    }

    fn scales(&self) -> Vec<f64> {
        let n = (self.data.n_flips() as f64).max(1.0);
        let mut s = vec![0.0; self.dim()];
        s[A] = 2.0 / n.sqrt() + 0.01;
        s[TH] = 2.0 / n.sqrt() + 0.01;
        s[LA] = 0.03;
        s[RH] = 0.5;
        s[LS_A..=LS_RH].fill(0.3);
        let unit_sd = |m: f64| (1.0 / (m / 4.0 + 1.0 / 0.05f64.powi(2))).sqrt();
        let cs = self.coin_start();
        let ps = self.person_start();
        for (j, ids) in self.by_coin.iter().enumerate() {
            s[cs + j] = unit_sd(ids.iter().map(|&i| self.data.batches[i].len() as f64).sum());
        }
        for (k, ids) in self.by_person.iter().enumerate() {
            s[ps + 3 * k] = unit_sd(ids.iter().map(|&i| self.data.batches[i].len() as f64).sum());
            s[ps + 3 * k + 1] = 0.05;
            s[ps + 3 * k + 2] = 0.5;
        }
        s
    }

    fn initial(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        let n = self.data.n_flips() as f64;
        let heads: u64 = self.data.batches.iter().map(|b| b.h_h + b.h_t).sum();
        let same: u64 = self.data.batches.iter().map(Batch::n_same).sum();
        let mut x = vec![0.0; self.dim()];
        x[A] = logit((heads as f64 + 0.5) / (n + 1.0));
        x[TH] = logit((same as f64 + 0.5) / (n + 1.0));
        x[LA] = 0.02;
        x[RH] = -1.0;
        x[LS_A] = 0.04f64.ln();
        x[LS_TH] = 0.04f64.ln();
        x[LS_LA] = 0.04f64.ln();
        x[LS_RH] = 0.5f64.ln();
        let cs = self.coin_start();
        let ps = self.person_start();
        let a = x[A];
        x[cs..ps].fill(a);
        for k in 0..self.data.persons.len() {
            x[ps + 3 * k] = x[TH];
            x[ps + 3 * k + 1] = x[LA];
            x[ps + 3 * k + 2] = x[RH];
        }
        x
    }

    fn natural_names(&self) -> Vec<String> {
        NATURAL_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn to_natural(&self, x: &[f64]) -> Vec<f64> {
        let (a, th, la) = (inv_logit(x[A]), inv_logit(x[TH]), inv_logit(x[LA]));
        let (s_th, s_la) = (x[LS_TH].exp(), x[LS_LA].exp());
        vec![
            a,
            th,
            la,
            x[RH],
            x[LS_A].exp(),
            s_th,
            s_la,
            x[LS_RH].exp(),
            inv_logit(x[TH] + x[LA]),
            s_th * th * (1.0 - th),
            s_la * la * (1.0 - la),
        ]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LearningSummary {
    pub baseline: Estimate,
    pub toss_order: Estimate,
    pub initial: Estimate,
    pub rho: Estimate,
    pub sigma_rho: Estimate,
    pub sd_people_baseline: Estimate,
    pub sd_people_toss_order: Estimate,
    pub heads: Estimate,
    pub batches: usize,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub global_acceptance: f64,
    pub unit_acceptance: f64,
}

#[derive(Debug, Clone)]
pub struct LearningFit {
    pub model: LearningModel,
    pub draws: PosteriorDraws,
    pub summary: LearningSummary,
}

pub fn fit_learning(data: &Batches, priors: LearningPriors, settings: &Settings) -> Result<LearningFit> {
    let model = LearningModel::new(priors, data)?;
    let draws = mcmc::sample(&model, settings)?;
    let est = |n: &str| draws.estimate(n).expect("natural column");
    let summary = LearningSummary {
        baseline: est("theta_mu"),
        toss_order: est("lambda_mu"),
        initial: est("initial"),
        rho: est("rho_mu"),
        sigma_rho: est("sigma_rho"),
        sd_people_baseline: est("sd_people_baseline"),
        sd_people_toss_order: est("sd_people_toss_order"),
        heads: est("alpha_mu"),
        batches: data.batches.len(),
        max_rhat: draws.diagnostics.max_rhat,
        min_ess: draws.diagnostics.min_ess,
        global_acceptance: draws.diagnostics.global_acceptance,
        unit_acceptance: draws.diagnostics.unit_acceptance,
    };
    Ok(LearningFit { model, draws, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Posterior of the average same-side probability along `t_grid`.
pub fn learning_curve(draws: &PosteriorDraws, t_grid: &[f64]) -> Result<Vec<CurvePoint>> {
    let col = |n: &str| draws.natural.column(n).ok_or_else(|| Error::InvalidArgument(format!("draws lack {n}")));
    let (th, la, rho) = (col("theta_mu")?, col("lambda_mu")?, col("rho_mu")?);
    Ok(t_grid
        .iter()
        .map(|&t| {
            let mut p: Vec<f64> = (0..th.len())
                .map(|i| inv_logit(same_side_logit(logit(th[i]), logit(la[i]), rho[i], t)))
                .collect();
            let mean = p.iter().sum::<f64>() / p.len() as f64;
            p.sort_by(f64::total_cmp);
            CurvePoint { t, mean, ci_low: quantile_sorted(&p, 0.025), ci_high: quantile_sorted(&p, 0.975) }
        })
        .collect())
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "mean", "ci_low", "ci_high"])?;
    for p in points {
        w.write_record([p.t, p.mean, p.ci_low, p.ci_high].map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn derived_initial(theta: f64, lambda: f64) -> f64 {
    inv_logit(logit(theta) + logit(lambda))
}
