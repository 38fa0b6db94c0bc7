//! Hierarchical logistic model for aggregated flips.
//!
//! A flip of person `k` with coin `j` that starts on side `s` lands heads
//! with probability `inv_logit(logit α_j + s · logit β_k)`, where
//! `logit α_j = logit α_μ + γ_αj` (heads-tails bias per coin) and
//! `logit β_k = logit β_μ + γ_βk` (same-side bias per person).

pub mod glmm;
pub mod sites;

use std::f64::consts::{LN_2, PI};
use std::ops::Range;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::binomial::TruncatedBetaPrior;
use crate::data::{AggregateCell, Cells};
use crate::mcmc::{self, estimate, Estimate, Model, PosteriorDraws, RandomEffect, Settings};
use crate::numerics::{beta_ln_pdf, gauss_hermite, inv_logit, ln_sigmoid, log_gamma, logit};
use crate::sensitivity::NormalMomentPrior;
use crate::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Which components of the model are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub has_same_side_bias: bool,
    pub has_heads_tails_bias: bool,
    pub has_person_heterogeneity: bool,
    pub has_coin_heterogeneity: bool,
}

impl ModelSpec {
    pub const FULL: ModelSpec = ModelSpec {
        has_same_side_bias: true,
        has_heads_tails_bias: true,
        has_person_heterogeneity: true,
        has_coin_heterogeneity: true,
    };

    /// `M1 … M16`: same-side varies slowest, coin heterogeneity fastest, each
    /// flag going present → absent.
    pub fn from_index(index: usize) -> Option<ModelSpec> {
        if !(1..=16).contains(&index) {
            return None;
        }
        let bits = index - 1;
        Some(ModelSpec {
            has_same_side_bias: bits & 8 == 0,
            has_heads_tails_bias: bits & 4 == 0,
            has_person_heterogeneity: bits & 2 == 0,
            has_coin_heterogeneity: bits & 1 == 0,
        })
    }

    pub fn index(&self) -> usize {
        1 + (!self.has_same_side_bias as usize) * 8
            + (!self.has_heads_tails_bias as usize) * 4
            + (!self.has_person_heterogeneity as usize) * 2
            + (!self.has_coin_heterogeneity as usize)
    }

    pub fn label(&self) -> String {
        format!("M{}", self.index())
    }
}

/// Prior on a location parameter (α_μ or β_μ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LocationPrior {
    /// Beta on the probability scale.
    Beta { a: f64, b: f64 },
    /// Beta on the probability scale restricted to `[lower, upper]`.
    TruncatedBeta { a: f64, b: f64, lower: f64, upper: f64 },
    /// Normal-moment prior on the logit scale.
    NormalMoment { phi: f64, positive_only: bool },
}

impl LocationPrior {
    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            LocationPrior::Beta { a, b } if a > 0.0 && b > 0.0 => Ok(()),
            LocationPrior::TruncatedBeta { a, b, lower, upper } => {
                TruncatedBetaPrior::new(a, b, lower, upper).map(|_| ())
            }
            LocationPrior::NormalMoment { phi, .. } if phi > 0.0 => Ok(()),
            other => Err(Error::DegeneratePrior(format!("{other:?}"))),
        }
    }

    /// Log density of the probability `p`.
    pub fn ln_pdf(&self, p: f64) -> f64 {
        if !(p > 0.0 && p < 1.0) {
            return f64::NEG_INFINITY;
        }
        self.ln_pdf_logit(logit(p)) - p.ln() - (1.0 - p).ln()
    }

    /// Log density of `x = logit p` (includes the change of variables).
    pub fn ln_pdf_logit(&self, x: f64) -> f64 {
        let lj = ln_sigmoid(x) + ln_sigmoid(-x);
        match *self {
            LocationPrior::Beta { a, b } => {
                a * ln_sigmoid(x) + b * ln_sigmoid(-x) - crate::numerics::log_beta(a, b).unwrap_or(f64::NAN)
            }
            LocationPrior::TruncatedBeta { a, b, lower, upper } => {
                let p = inv_logit(x);
                if p < lower || p > upper {
                    return f64::NEG_INFINITY;
                }
                let tb = TruncatedBetaPrior { a, b, lower, upper };
                match (beta_ln_pdf(p, a, b), tb.ln_mass()) {
                    (Ok(d), Ok(m)) => d - m + lj,
                    _ => f64::NAN,
                }
            }
            LocationPrior::NormalMoment { phi, positive_only } => {
                NormalMomentPrior { phi, positive_only }.ln_pdf(x)
            }
        }
    }
}

/// Prior on a random-effect standard deviation (logit scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScalePrior {
    HalfNormal { sd: f64 },
    Gamma { shape: f64, rate: f64 },
    /// Normal-moment prior restricted to positive values.
    NormalMoment { phi: f64 },
}

impl ScalePrior {
    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            ScalePrior::HalfNormal { sd } if sd > 0.0 => Ok(()),
            ScalePrior::Gamma { shape, rate } if shape > 0.0 && rate > 0.0 => Ok(()),
            ScalePrior::NormalMoment { phi } if phi > 0.0 => Ok(()),
            other => Err(Error::DegeneratePrior(format!("{other:?}"))),
        }
    }

    pub fn ln_pdf(&self, sigma: f64) -> f64 {
        if !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        match *self {
            ScalePrior::HalfNormal { sd } => LN_2 - LN_SQRT_2PI - sd.ln() - 0.5 * (sigma / sd).powi(2),
            ScalePrior::Gamma { shape, rate } => {
                shape * rate.ln() - log_gamma(shape).unwrap_or(f64::NAN) + (shape - 1.0) * sigma.ln() - rate * sigma
            }
            ScalePrior::NormalMoment { phi } => NormalMomentPrior { phi, positive_only: true }.ln_pdf(sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Estimation,
    Testing,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    pub kind: PriorKind,
    pub alpha_mu: LocationPrior,
    pub beta_mu: LocationPrior,
    pub sigma_alpha: ScalePrior,
    pub sigma_beta: ScalePrior,
}

impl PriorSet {
    /// Weakly informative priors used for parameter estimation.
    pub fn estimation() -> Self {
        PriorSet {
            kind: PriorKind::Estimation,
            alpha_mu: LocationPrior::Beta { a: 312.0, b: 312.0 },
            beta_mu: LocationPrior::Beta { a: 312.0, b: 312.0 },
            sigma_alpha: ScalePrior::HalfNormal { sd: 0.04 },
            sigma_beta: ScalePrior::HalfNormal { sd: 0.04 },
        }
    }

    /// Informed alternatives used for model comparison.
    pub fn testing() -> Self {
        PriorSet {
            kind: PriorKind::Testing,
            alpha_mu: LocationPrior::Beta { a: 5000.0, b: 5000.0 },
            beta_mu: LocationPrior::TruncatedBeta { a: 5100.0, b: 4900.0, lower: 0.5, upper: 1.0 },
            sigma_alpha: ScalePrior::Gamma { shape: 4.0, rate: 200.0 },
            sigma_beta: ScalePrior::Gamma { shape: 4.0, rate: 200.0 },
        }
    }

    /// Normal-moment priors with the given modes (logit scale).
    pub fn normal_moment(phi_beta: f64, phi_alpha: f64, phi_sigma_beta: f64, phi_sigma_alpha: f64) -> Self {
        PriorSet {
            kind: PriorKind::Custom,
            alpha_mu: LocationPrior::NormalMoment { phi: phi_alpha, positive_only: false },
            beta_mu: LocationPrior::NormalMoment { phi: phi_beta, positive_only: true },
            sigma_alpha: ScalePrior::NormalMoment { phi: phi_sigma_alpha },
            sigma_beta: ScalePrior::NormalMoment { phi: phi_sigma_beta },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.alpha_mu.validate()?;
        self.beta_mu.validate()?;
        self.sigma_alpha.validate()?;
        self.sigma_beta.validate()
    }
}

/// Natural-scale parameters. Disabled components hold their pinned values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HierParams {
    pub alpha_mu: f64,
    pub beta_mu: f64,
    pub gamma_alpha: Vec<f64>,
    pub gamma_beta: Vec<f64>,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
}

impl HierParams {
    /// Everything at the null: probabilities 0.5, no heterogeneity.
    pub fn null(n_coins: usize, n_persons: usize) -> Self {
        HierParams {
            alpha_mu: 0.5,
            beta_mu: 0.5,
            gamma_alpha: vec![0.0; n_coins],
            gamma_beta: vec![0.0; n_persons],
            sigma_alpha: 0.0,
            sigma_beta: 0.0,
        }
    }
}

#[inline]
pub(crate) fn cell_ll(c: &AggregateCell, mu: f64) -> f64 {
    c.n_trials as f64 * ln_sigmoid(mu) - (c.n_trials - c.n_heads) as f64 * mu
}

/// Binomial log-likelihood of the heads counts (without binomial
/// coefficients, so it equals the per-flip Bernoulli log-likelihood).
pub fn log_likelihood(p: &HierParams, cells: &Cells) -> Result<f64> {
    if p.gamma_alpha.len() != cells.coins.len() || p.gamma_beta.len() != cells.persons.len() {
        return Err(Error::InvalidArgument(format!(
            "offsets for {} coins and {} persons, data has {} and {}",
            p.gamma_alpha.len(),
            p.gamma_beta.len(),
            cells.coins.len(),
            cells.persons.len()
        )));
    }
    let la = logit(p.alpha_mu);
    let lb = logit(p.beta_mu);
    let total: f64 = cells
        .cells
        .iter()
        .map(|c| {
            let mu = la + p.gamma_alpha[c.coin] + c.start.sign() * (lb + p.gamma_beta[c.person]);
            cell_ll(c, mu)
        })
        .sum();
    if !total.is_finite() {
        return Err(Error::Estimation(format!("log-likelihood is not finite ({total})")));
    }
    Ok(total)
}

pub(crate) fn normal_offsets_ln_pdf(offsets: &[f64], sigma: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let ls = sigma.ln();
    offsets.iter().map(|g| -LN_SQRT_2PI - ls - 0.5 * (g / sigma).powi(2)).sum()
}

/// Natural-scale log prior density; pinned components contribute nothing.
pub fn log_prior(p: &HierParams, priors: &PriorSet, spec: ModelSpec) -> f64 {
    let mut lp = 0.0;
    if spec.has_heads_tails_bias {
        lp += priors.alpha_mu.ln_pdf(p.alpha_mu);
    }
    if spec.has_same_side_bias {
        lp += priors.beta_mu.ln_pdf(p.beta_mu);
    }
    if spec.has_coin_heterogeneity {
        lp += priors.sigma_alpha.ln_pdf(p.sigma_alpha) + normal_offsets_ln_pdf(&p.gamma_alpha, p.sigma_alpha);
    }
    if spec.has_person_heterogeneity {
        lp += priors.sigma_beta.ln_pdf(p.sigma_beta) + normal_offsets_ln_pdf(&p.gamma_beta, p.sigma_beta);
    }
    lp
}

#[derive(Debug, Clone, Copy, Default)]
struct Layout {
    alpha: Option<usize>,
    beta: Option<usize>,
    log_sigma_alpha: Option<usize>,
    log_sigma_beta: Option<usize>,
    n_globals: usize,
    coin_start: Option<usize>,
    person_start: Option<usize>,
    site_start: Option<usize>,
    dim: usize,
}

/// Centered parameterization on the unconstrained scale:
/// globals `[logit α_μ, logit β_μ, ln σ_α, ln σ_β]` (present ones only),
/// then `logit α_j` per coin and `logit β_k` per person.
#[derive(Debug, Clone)]
pub struct HierModel {
    pub spec: ModelSpec,
    pub priors: PriorSet,
    cells: Cells,
    layout: Layout,
    by_coin: Vec<Vec<usize>>,
    by_person: Vec<Vec<usize>>,
    sites: Option<sites::SiteDesign>,
}

pub const NATURAL_NAMES: [&str; 6] =
    ["alpha_mu", "beta_mu", "sigma_alpha", "sigma_beta", "sd_coins_prob", "sd_persons_prob"];

impl HierModel {
    pub fn new(spec: ModelSpec, priors: PriorSet, cells: &Cells) -> Result<Self> {
        priors.validate()?;
        if cells.cells.is_empty() {
            return Err(Error::InvalidArgument("no data".into()));
        }
        let mut l = Layout::default();
        let mut next = 0;
        let mut take = |flag: bool| {
            flag.then(|| {
                next += 1;
                next - 1
            })
        };
        l.alpha = take(spec.has_heads_tails_bias);
        l.beta = take(spec.has_same_side_bias);
        l.log_sigma_alpha = take(spec.has_coin_heterogeneity);
        l.log_sigma_beta = take(spec.has_person_heterogeneity);
        let mut dim = next;
        l.n_globals = dim;
        if spec.has_coin_heterogeneity {
            l.coin_start = Some(dim);
            dim += cells.coins.len();
        }
        if spec.has_person_heterogeneity {
            l.person_start = Some(dim);
            dim += cells.persons.len();
        }
        l.dim = dim;
        Ok(HierModel {
            spec,
            priors,
            by_coin: cells.cells_by_coin(),
            by_person: cells.cells_by_person(),
            cells: cells.clone(),
            layout: l,
            sites: None,
        })
    }

    /// Adds site effects `Σ_c C[site, c] η_c` to every person's same-side
    /// logit, with `η_c ~ N(0, prior_sd²)` as extra global coordinates.
    pub fn with_sites(spec: ModelSpec, priors: PriorSet, cells: &Cells, design: sites::SiteDesign) -> Result<Self> {
        if design.person_site.len() != cells.persons.len() {
            return Err(Error::InvalidArgument("site design does not match the persons".into()));
        }
        let mut m = HierModel::new(spec, priors, cells)?;
        let extra = design.n_contrasts();
        let l = &mut m.layout;
        let shift = |v: &mut Option<usize>| {
            if let Some(i) = v.as_mut() {
                *i += extra;
            }
        };
        shift(&mut l.coin_start);
        shift(&mut l.person_start);
        l.site_start = Some(l.n_globals);
        l.n_globals += extra;
        l.dim += extra;
        m.sites = Some(design);
        Ok(m)
    }

    pub fn site_design(&self) -> Option<&sites::SiteDesign> {
        self.sites.as_ref()
    }

    #[inline]
    fn site_shift(&self, x: &[f64], k: usize) -> f64 {
        match (&self.sites, self.layout.site_start) {
            (Some(d), Some(s)) => d.effect(&x[s..s + d.n_contrasts()], d.person_site[k]),
            _ => 0.0,
        }
    }

    pub fn cells(&self) -> &Cells {
        &self.cells
    }

    fn alpha_loc(&self, x: &[f64]) -> f64 {
        self.layout.alpha.map_or(0.0, |i| x[i])
    }

    fn beta_loc(&self, x: &[f64]) -> f64 {
        self.layout.beta.map_or(0.0, |i| x[i])
    }

    #[inline]
    fn mu(&self, x: &[f64], c: &AggregateCell, a_loc: f64, b_loc: f64) -> f64 {
        let a = self.layout.coin_start.map_or(a_loc, |s| x[s + c.coin]);
        let b = match self.layout.person_start {
            Some(s) => x[s + c.person],
            None => b_loc + self.site_shift(x, c.person),
        };
        a + c.start.sign() * b
    }

    fn likelihood(&self, x: &[f64]) -> f64 {
        let (a, b) = (self.alpha_loc(x), self.beta_loc(x));
        self.cells.cells.iter().map(|c| cell_ll(c, self.mu(x, c, a, b))).sum()
    }

    fn hyperpriors(&self, x: &[f64]) -> f64 {
        let l = &self.layout;
        let mut lp = 0.0;
        if let Some(i) = l.alpha {
            lp += self.priors.alpha_mu.ln_pdf_logit(x[i]);
        }
        if let Some(i) = l.beta {
            lp += self.priors.beta_mu.ln_pdf_logit(x[i]);
        }
        if let Some(i) = l.log_sigma_alpha {
            lp += self.priors.sigma_alpha.ln_pdf(x[i].exp()) + x[i];
        }
        if let Some(i) = l.log_sigma_beta {
            lp += self.priors.sigma_beta.ln_pdf(x[i].exp()) + x[i];
        }
        if let (Some(d), Some(s)) = (&self.sites, l.site_start) {
            lp += normal_offsets_ln_pdf(&x[s..s + d.n_contrasts()], d.prior_sd);
        }
        lp
    }

    fn effect_terms(&self, x: &[f64]) -> f64 {
        let l = &self.layout;
        let mut lp = 0.0;
        if let (Some(s), Some(ls)) = (l.coin_start, l.log_sigma_alpha) {
            let loc = self.alpha_loc(x);
            let etas: Vec<f64> = x[s..s + self.cells.coins.len()].iter().map(|e| e - loc).collect();
            lp += normal_offsets_ln_pdf(&etas, x[ls].exp());
        }
        if let (Some(s), Some(ls)) = (l.person_start, l.log_sigma_beta) {
            let loc = self.beta_loc(x);
            let etas: Vec<f64> = x[s..s + self.cells.persons.len()]
                .iter()
                .enumerate()
                .map(|(k, e)| e - loc - self.site_shift(x, k))
                .collect();
            lp += normal_offsets_ln_pdf(&etas, x[ls].exp());
        }
        lp
    }

    fn globals_enter_likelihood(&self) -> bool {
        (self.spec.has_heads_tails_bias && !self.spec.has_coin_heterogeneity)
            || ((self.spec.has_same_side_bias || self.sites.is_some()) && !self.spec.has_person_heterogeneity)
    }

    fn n_coin_units(&self) -> usize {
        if self.layout.coin_start.is_some() {
            self.cells.coins.len()
        } else {
            0
        }
    }

    /// Natural-scale parameters for an unconstrained point.
    pub fn params(&self, x: &[f64]) -> HierParams {
        let l = &self.layout;
        let (a, b) = (self.alpha_loc(x), self.beta_loc(x));
        let mut p = HierParams::null(self.cells.coins.len(), self.cells.persons.len());
        p.alpha_mu = inv_logit(a);
        p.beta_mu = inv_logit(b);
        if let (Some(s), Some(ls)) = (l.coin_start, l.log_sigma_alpha) {
            p.sigma_alpha = x[ls].exp();
            for (j, g) in p.gamma_alpha.iter_mut().enumerate() {
                *g = x[s + j] - a;
            }
        }
        if let (Some(s), Some(ls)) = (l.person_start, l.log_sigma_beta) {
            p.sigma_beta = x[ls].exp();
            for (k, g) in p.gamma_beta.iter_mut().enumerate() {
                *g = x[s + k] - b - self.site_shift(x, k);
            }
        }
        p
    }

    /// Log-likelihood at the pinned null point, used when nothing is free.
    pub fn fixed_log_likelihood(&self) -> f64 {
        self.likelihood(&[])
    }
}

impl Model for HierModel {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn names(&self) -> Vec<String> {
        let l = &self.layout;
        let mut names = Vec::with_capacity(l.dim);
        if l.alpha.is_some() {
            names.push("logit_alpha_mu".to_string());
        }
        if l.beta.is_some() {
            names.push("logit_beta_mu".to_string());
        }
        if l.log_sigma_alpha.is_some() {
            names.push("log_sigma_alpha".to_string());
        }
        if l.log_sigma_beta.is_some() {
            names.push("log_sigma_beta".to_string());
        }
        if let Some(d) = &self.sites {
            names.extend((0..d.n_contrasts()).map(|c| format!("site_contrast[{c}]")));
        }
        if l.coin_start.is_some() {
            names.extend(self.cells.coins.iter().map(|c| format!("logit_alpha[{c}]")));
        }
        if l.person_start.is_some() {
            names.extend(self.cells.persons.iter().map(|p| format!("logit_beta[{p}]")));
        }
        names
    }

    fn n_globals(&self) -> usize {
        self.layout.n_globals
    }

    fn units(&self) -> Vec<Range<usize>> {
        (self.layout.n_globals..self.layout.dim).map(|i| i..i + 1).collect()
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
        let mut lp = lp + self.effect_terms(x);
        if self.globals_enter_likelihood() {
            lp += self.likelihood(x);
        }
        lp
    }

    fn log_density_unit(&self, x: &[f64], u: usize) -> f64 {
        let l = &self.layout;
        let (a, b) = (self.alpha_loc(x), self.beta_loc(x));
        let nc = self.n_coin_units();
        let (idx, loc, ls, cell_ids) = if u < nc {
            (l.coin_start.unwrap() + u, a, l.log_sigma_alpha.unwrap(), &self.by_coin[u])
        } else {
            let k = u - nc;
            (l.person_start.unwrap() + k, b + self.site_shift(x, k), l.log_sigma_beta.unwrap(), &self.by_person[k])
        };
        let sigma = x[ls].exp();
        let mut lp = -0.5 * ((x[idx] - loc) / sigma).powi(2);
        for &ci in cell_ids {
            let c = &self.cells.cells[ci];
            lp += cell_ll(c, self.mu(x, c, a, b));
        }
        lp
    }

    fn random_effects(&self) -> Vec<RandomEffect> {
        let l = &self.layout;
        let mut out = Vec::new();
        if let (Some(s), Some(ls)) = (l.coin_start, l.log_sigma_alpha) {
            out.push(RandomEffect {
                name: "coin".into(),
                location: l.alpha,
                location_value: 0.0,
                log_scale: ls,
                members: (s..s + self.cells.coins.len()).collect(),
                member_information: self.cells.coin_totals().iter().map(|&(n, _)| n as f64 / 4.0).collect(),
                member_terms: Vec::new(),
            });
        }
        if let (Some(s), Some(ls)) = (l.person_start, l.log_sigma_beta) {
            out.push(RandomEffect {
                name: "person".into(),
                location: l.beta,
                location_value: 0.0,
                log_scale: ls,
                members: (s..s + self.cells.persons.len()).collect(),
                member_information: self.cells.person_totals().iter().map(|&(n, _)| n as f64 / 4.0).collect(),
                member_terms: match (&self.sites, l.site_start) {
                    (Some(d), Some(st)) => (0..self.cells.persons.len())
                        .map(|k| (0..d.n_contrasts()).map(|c| (st + c, d.coefficient(d.person_site[k], c))).collect())
                        .collect(),
                    _ => Vec::new(),
                },
            });
        }
        out
    }

    fn scales(&self) -> Vec<f64> {
        let l = &self.layout;
        let n = (self.cells.n_trials() as f64).max(1.0);
        let mut s = vec![0.0; l.dim];
        let loc_sd = 2.0 / n.sqrt() + 0.01;
        for i in [l.alpha, l.beta].into_iter().flatten() {
            s[i] = loc_sd;
        }
        for i in [l.log_sigma_alpha, l.log_sigma_beta].into_iter().flatten() {
            s[i] = 0.3;
        }
        if let (Some(d), Some(st)) = (&self.sites, l.site_start) {
            s[st..st + d.n_contrasts()].fill(loc_sd);
        }
        let unit_sd = |m: u64| (1.0 / (m as f64 / 4.0 + 1.0 / 0.05f64.powi(2))).sqrt();
        if let Some(st) = l.coin_start {
            for (j, (m, _)) in self.cells.coin_totals().into_iter().enumerate() {
                s[st + j] = unit_sd(m);
            }
        }
        if let Some(st) = l.person_start {
            for (k, (m, _)) in self.cells.person_totals().into_iter().enumerate() {
                s[st + k] = unit_sd(m);
            }
        }
        s
    }

    fn initial(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        let l = &self.layout;
        let n = self.cells.n_trials() as f64;
        let mut x = vec![0.0; l.dim];
        let clamp = |v: f64, prior: &LocationPrior| match *prior {
            LocationPrior::TruncatedBeta { lower, upper, .. } => {
                v.clamp(logit(lower.max(1e-9)) + 0.02, logit(upper.min(1.0 - 1e-9)) - 0.02)
            }
            LocationPrior::NormalMoment { positive_only: true, phi } => v.max(phi.min(0.05)),
            _ => v,
        };
        if let Some(i) = l.alpha {
            x[i] = clamp(logit((self.cells.n_heads() as f64 + 0.5) / (n + 1.0)), &self.priors.alpha_mu);
        }
        if let Some(i) = l.beta {
            x[i] = clamp(logit((self.cells.n_same() as f64 + 0.5) / (n + 1.0)), &self.priors.beta_mu);
        }
        for i in [l.log_sigma_alpha, l.log_sigma_beta].into_iter().flatten() {
            x[i] = 0.04f64.ln();
        }
        let (a, b) = (self.alpha_loc(&x), self.beta_loc(&x));
        if let Some(s) = l.coin_start {
            x[s..s + self.cells.coins.len()].fill(a);
        }
        if let Some(s) = l.person_start {
            x[s..s + self.cells.persons.len()].fill(b);
        }
        x
    }

    fn natural_names(&self) -> Vec<String> {
        let mut names: Vec<String> = NATURAL_NAMES.iter().map(|s| s.to_string()).collect();
        if let Some(d) = &self.sites {
            names.extend(d.names.iter().map(|s| format!("delta[{s}]")));
        }
        names
    }

    fn to_natural(&self, x: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let a = inv_logit(self.alpha_loc(x));
        let b = inv_logit(self.beta_loc(x));
        let sa = l.log_sigma_alpha.map_or(0.0, |i| x[i].exp());
        let sb = l.log_sigma_beta.map_or(0.0, |i| x[i].exp());
        let mut out = vec![a, b, sa, sb, sa * a * (1.0 - a), sb * b * (1.0 - b)];
        if let (Some(d), Some(st)) = (&self.sites, l.site_start) {
            let eta = &x[st..st + d.n_contrasts()];
            let lb = self.beta_loc(x);
            out.extend((0..d.names.len()).map(|site| inv_logit(lb + d.effect(eta, site)) - b));
        }
        out
    }
}

/// Posterior draws of a hierarchical model together with the model itself.
#[derive(Debug, Clone)]
pub struct HierFit {
    pub model: HierModel,
    pub draws: PosteriorDraws,
}

pub fn sample_posterior(spec: ModelSpec, priors: PriorSet, cells: &Cells, settings: &Settings) -> Result<HierFit> {
    let model = HierModel::new(spec, priors, cells)?;
    let draws = mcmc::sample(&model, settings)?;
    Ok(HierFit { model, draws })
}

impl HierFit {
    /// Posterior of each person's same-side probability `β_k`.
    pub fn person_probabilities(&self) -> Vec<(String, Estimate)> {
        self.unit_probabilities(self.model.layout.person_start, self.model.layout.beta, &self.model.cells.persons)
    }

    /// Posterior of each coin's heads probability `α_j`.
    pub fn coin_probabilities(&self) -> Vec<(String, Estimate)> {
        self.unit_probabilities(self.model.layout.coin_start, self.model.layout.alpha, &self.model.cells.coins)
    }

    fn unit_probabilities(&self, start: Option<usize>, loc: Option<usize>, names: &[String]) -> Vec<(String, Estimate)> {
        let u = &self.draws.unconstrained;
        names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let v: Vec<f64> = u
                    .rows()
                    .map(|r| inv_logit(start.map(|s| r[s + i]).or(loc.map(|l| r[l])).unwrap_or(0.0)))
                    .collect();
                (name.clone(), estimate(&v))
            })
            .collect()
    }
}

/// How logit-scale spreads are mapped to the probability scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeterogeneityTransform {
    /// `σ · p(1 − p)` at the draw's mean probability.
    #[default]
    Delta,
    /// Exact standard deviation of `inv_logit(logit p + σ Z)`, `Z ~ N(0, 1)`.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityScaleReport {
    pub same_side: Estimate,
    pub sd_persons: Estimate,
    pub heads: Estimate,
    pub sd_coins: Estimate,
    pub transform: HeterogeneityTransform,
}

pub fn probability_sd(p: f64, sigma: f64, transform: HeterogeneityTransform) -> f64 {
    match transform {
        HeterogeneityTransform::Delta => sigma * p * (1.0 - p),
        HeterogeneityTransform::Exact => {
            if sigma == 0.0 {
                return 0.0;
            }
            let rule = gauss_hermite(40).expect("fixed order");
            let c = logit(p);
            let norm = PI.sqrt();
            let m1 = rule.apply(|z| inv_logit(c + sigma * std::f64::consts::SQRT_2 * z)) / norm;
            let m2 = rule.apply(|z| inv_logit(c + sigma * std::f64::consts::SQRT_2 * z).powi(2)) / norm;
            (m2 - m1 * m1).max(0.0).sqrt()
        }
    }
}

pub fn summarize_probability_scale(draws: &PosteriorDraws, transform: HeterogeneityTransform) -> Result<ProbabilityScaleReport> {
    let col = |name: &str| {
        draws.natural.column(name).ok_or_else(|| Error::InvalidArgument(format!("draws lack {name}")))
    };
    let (a, b, sa, sb) = (col("alpha_mu")?, col("beta_mu")?, col("sigma_alpha")?, col("sigma_beta")?);
    let sd = |p: &[f64], s: &[f64]| -> Vec<f64> {
        p.iter().zip(s).map(|(&p, &s)| probability_sd(p, s, transform)).collect()
    };
    Ok(ProbabilityScaleReport {
        same_side: estimate(&b),
        sd_persons: estimate(&sd(&b, &sb)),
        heads: estimate(&a),
        sd_coins: estimate(&sd(&a, &sa)),
        transform,
    })
}
