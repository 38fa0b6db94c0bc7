//! Adaptive Metropolis-within-Gibbs sampling for hierarchical models.
//!
//! A [`Model`] exposes an unconstrained coordinate vector split into a block
//! of global parameters followed by small per-unit blocks. Each iteration
//! updates the global block, then every unit block, then performs two
//! interweaving moves per random effect: a joint shift of the location and
//! its members, and a joint rescaling of the spread and the members'
//! deviations. The latter two are the non-centered directions that a
//! centered parameterization explores poorly.

pub mod adapt;
pub mod diagnostics;

use std::ops::Range;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use adapt::AdaptiveRwm;
pub use diagnostics::{ess_bulk, ess_plain, ess_single, split_rhat};

use crate::{Error, Result};

/// A normal random effect whose members are stored centered, i.e. as
/// `location + deviation`.
#[derive(Debug, Clone)]
pub struct RandomEffect {
    pub name: String,
    /// Global coordinate of the location; `None` when pinned.
    pub location: Option<usize>,
    pub location_value: f64,
    /// Global coordinate holding `ln σ`.
    pub log_scale: usize,
    pub members: Vec<usize>,
    /// Approximate Fisher information each member receives from the data.
    pub member_information: Vec<f64>,
    /// Extra location terms `Σ coef · x[idx]` per member (empty when the
    /// location is shared).
    pub member_terms: Vec<Vec<(usize, f64)>>,
}

impl RandomEffect {
    pub fn location_at(&self, x: &[f64]) -> f64 {
        self.location.map_or(self.location_value, |l| x[l])
    }

    /// Location of member `i` (position within `members`).
    pub fn member_location(&self, x: &[f64], i: usize) -> f64 {
        let extra: f64 = self.member_terms.get(i).map_or(0.0, |t| t.iter().map(|&(j, c)| c * x[j]).sum());
        self.location_at(x) + extra
    }
}

pub trait Model: Sync {
    fn dim(&self) -> usize;

    /// Names of the unconstrained coordinates.
    fn names(&self) -> Vec<String>;

    /// Coordinates `0..n_globals()` form the global block.
    fn n_globals(&self) -> usize;

    /// Disjoint coordinate ranges covering `n_globals()..dim()`.
    fn units(&self) -> Vec<Range<usize>>;

    /// Full unnormalized log posterior on the unconstrained scale, including
    /// Jacobians. Normalizing constants of the priors must be included so
    /// the marginal likelihood is meaningful.
    fn log_density(&self, x: &[f64]) -> f64;

    /// All terms of the log density that depend on the global block.
    fn log_density_globals(&self, x: &[f64]) -> f64 {
        self.log_density(x)
    }

    /// All terms of the log density that depend on unit `u`'s block.
    fn log_density_unit(&self, x: &[f64], _u: usize) -> f64 {
        // fallback: correct but slow
        self.log_density(x)
    }

    fn random_effects(&self) -> Vec<RandomEffect> {
        Vec::new()
    }

    /// Adds a joint move that shifts every random-effect location together
    /// with its members, for locations that are correlated a posteriori.
    fn joint_location_shift(&self) -> bool {
        false
    }

    /// Rough posterior standard deviation per coordinate.
    fn scales(&self) -> Vec<f64> {
        vec![0.1; self.dim()]
    }

    /// A starting point (the sampler jitters it per chain).
    fn initial(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Names of the natural-scale quantities reported per draw.
    fn natural_names(&self) -> Vec<String>;

    /// Natural-scale quantities for one draw.
    fn to_natural(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settings {
    pub chains: usize,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { chains: 4, warmup: 2000, iters: 2000, seed: 1 }
    }
}

impl Settings {
    fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.iters < 4 {
            return Err(Error::InvalidArgument(format!("need at least one chain and four draws: {self:?}")));
        }
        Ok(())
    }
}

/// Draws laid out chain-major: `values[(chain * iters + iter) * width + j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrawMatrix {
    pub names: Vec<String>,
    pub chains: usize,
    pub iters: usize,
    pub values: Vec<f64>,
}

impl DrawMatrix {
    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, chain: usize, iter: usize) -> &[f64] {
        let w = self.width();
        let start = (chain * self.iters + iter) * w;
        &self.values[start..start + w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.width().max(1)).take(self.chains * self.iters)
    }

    /// Column `j` split by chain.
    pub fn by_chain(&self, j: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.iters).map(|i| self.row(c, i)[j]).collect())
            .collect()
    }

    pub fn pooled(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.index_of(name).map(|j| self.pooled(j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub sd: f64,
    pub ci95: [f64; 2],
}

/// Posterior mean, standard deviation and central 95% interval.
pub fn estimate(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Estimate { mean, sd, ci95: [quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975)] }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Per natural-scale quantity.
    pub rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    pub max_rhat: f64,
    pub min_ess: f64,
    /// Mean post-warmup acceptance rate of the global block.
    pub global_acceptance: f64,
    /// Mean post-warmup acceptance rate over unit blocks.
    pub unit_acceptance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorDraws {
    pub unconstrained: DrawMatrix,
    pub natural: DrawMatrix,
    pub settings: Settings,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn estimate(&self, name: &str) -> Option<Estimate> {
        self.natural.column(name).map(|v| estimate(&v))
    }

    pub fn converged(&self, rhat_limit: f64) -> bool {
        self.diagnostics.max_rhat < rhat_limit
    }
}

pub const RHAT_LIMIT: f64 = 1.01;

struct ChainOutput {
    unconstrained: Vec<f64>,
    natural: Vec<f64>,
    global_acceptance: f64,
    unit_acceptance: f64,
}

struct InterweaveBlocks {
    location: Option<AdaptiveRwm>,
    scale: AdaptiveRwm,
}

fn run_chain<M: Model + ?Sized>(model: &M, settings: &Settings, chain: usize) -> ChainOutput {
    let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
    rng.set_stream(chain as u64 + 1);
    let dim = model.dim();
    let g = model.n_globals();
    let units = model.units();
    let effects = model.random_effects();
    let scales = model.scales();
    let warmup = settings.warmup;

    let start = model.initial(&mut rng);
    let mut x = start.clone();
    for _ in 0..100 {
        for ((xi, s), x0) in x.iter_mut().zip(&scales).zip(&start) {
            *xi = x0 + s * rng.sample::<f64, _>(StandardNormal);
        }
        if model.log_density(&x).is_finite() {
            break;
        }
        x.copy_from_slice(&start);
    }

    let mut global = (g > 0).then(|| AdaptiveRwm::new(&scales[..g], warmup));
    let mut unit_blocks: Vec<AdaptiveRwm> =
        units.iter().map(|r| AdaptiveRwm::new(&scales[r.clone()], warmup)).collect();
    let mut weave: Vec<InterweaveBlocks> = effects
        .iter()
        .map(|e| InterweaveBlocks {
            location: e.location.map(|l| AdaptiveRwm::new(&[scales[l]], warmup)),
            scale: AdaptiveRwm::new(&[0.2], warmup),
        })
        .collect();
    let shifted: Vec<usize> = if model.joint_location_shift() {
        effects.iter().enumerate().filter(|(_, e)| e.location.is_some()).map(|(i, _)| i).collect()
    } else {
        Vec::new()
    };
    let mut joint = (shifted.len() > 1).then(|| {
        let s: Vec<f64> = shifted.iter().map(|&i| scales[effects[i].location.unwrap()]).collect();
        AdaptiveRwm::new(&s, warmup)
    });

    let total = warmup + settings.iters;
    let mut out_u = Vec::with_capacity(settings.iters * dim);
    let nat_width = model.natural_names().len();
    let mut out_n = Vec::with_capacity(settings.iters * nat_width);
    let mut prop = x.clone();
    let mut buf = vec![0.0; dim.max(1)];

    for it in 0..total {
        if it == warmup {
            if let Some(b) = global.as_mut() {
                b.reset_counts();
            }
            unit_blocks.iter_mut().for_each(|b| b.reset_counts());
        }
        if let Some(block) = global.as_mut() {
            for _ in 0..3 {
                let current = model.log_density_globals(&x);
                prop.copy_from_slice(&x);
                block.propose(&x[..g], &mut buf[..g], &mut rng);
                prop[..g].copy_from_slice(&buf[..g]);
                let lp = model.log_density_globals(&prop);
                let (accept, p) = block.decide(lp - current, &mut rng);
                if accept {
                    x.copy_from_slice(&prop);
                }
                block.adapt(it, p, &x[..g]);
            }
        }
        for (u, (range, block)) in units.iter().zip(unit_blocks.iter_mut()).enumerate() {
            let current = model.log_density_unit(&x, u);
            let saved: Vec<f64> = x[range.clone()].to_vec();
            block.propose(&saved, &mut buf[..range.len()], &mut rng);
            x[range.clone()].copy_from_slice(&buf[..range.len()]);
            let lp = model.log_density_unit(&x, u);
            let (accept, p) = block.decide(lp - current, &mut rng);
            if !accept {
                x[range.clone()].copy_from_slice(&saved);
            }
            block.adapt(it, p, &x[range.clone()]);
        }
        if !effects.is_empty() {
            let mut current = model.log_density(&x);
            for (e, blocks) in effects.iter().zip(weave.iter_mut()) {
                if let (Some(l), Some(block)) = (e.location, blocks.location.as_mut()) {
                    let mut d = [0.0];
                    block.propose(&[0.0], &mut d, &mut rng);
                    prop.copy_from_slice(&x);
                    prop[l] += d[0];
                    for &m in &e.members {
                        prop[m] += d[0];
                    }
                    let lp = model.log_density(&prop);
                    let (accept, p) = block.decide(lp - current, &mut rng);
                    if accept {
                        x.copy_from_slice(&prop);
                        current = lp;
                    }
                    block.adapt(it, p, &[x[l]]);
                }
                let mut d = [0.0];
                blocks.scale.propose(&[0.0], &mut d, &mut rng);
                let factor = d[0].exp();
                prop.copy_from_slice(&x);
                prop[e.log_scale] += d[0];
                for (i, &m) in e.members.iter().enumerate() {
                    let loc = e.member_location(&x, i);
                    prop[m] = loc + factor * (x[m] - loc);
                }
                let lp = model.log_density(&prop);
                let log_jac = e.members.len() as f64 * d[0];
                let (accept, p) = blocks.scale.decide(lp - current + log_jac, &mut rng);
                if accept {
                    x.copy_from_slice(&prop);
                    current = lp;
                }
                blocks.scale.adapt(it, p, &[x[e.log_scale]]);
            }
            if let Some(block) = joint.as_mut() {
                let locs: Vec<f64> = shifted.iter().map(|&i| x[effects[i].location.unwrap()]).collect();
                let mut next = vec![0.0; locs.len()];
                block.propose(&locs, &mut next, &mut rng);
                prop.copy_from_slice(&x);
                for (k, &i) in shifted.iter().enumerate() {
                    let d = next[k] - locs[k];
                    prop[effects[i].location.unwrap()] += d;
                    for &m in &effects[i].members {
                        prop[m] += d;
                    }
                }
                let lp = model.log_density(&prop);
                let (accept, p) = block.decide(lp - current, &mut rng);
                if accept {
                    x.copy_from_slice(&prop);
                }
                let now: Vec<f64> = shifted.iter().map(|&i| x[effects[i].location.unwrap()]).collect();
                block.adapt(it, p, &now);
            }
        }
        if it >= warmup {
            out_u.extend_from_slice(&x);
            out_n.extend(model.to_natural(&x));
        }
    }
    let unit_acceptance = if unit_blocks.is_empty() {
        f64::NAN
    } else {
        unit_blocks.iter().map(|b| b.acceptance_rate()).sum::<f64>() / unit_blocks.len() as f64
    };
    ChainOutput {
        unconstrained: out_u,
        natural: out_n,
        global_acceptance: global.map_or(f64::NAN, |b| b.acceptance_rate()),
        unit_acceptance,
    }
}

/// Runs `settings.chains` independent chains (in parallel) and merges them
/// in chain order. Identical settings give identical draws.
pub fn sample<M: Model + ?Sized>(model: &M, settings: &Settings) -> Result<PosteriorDraws> {
    settings.validate()?;
    let outputs: Vec<ChainOutput> =
        (0..settings.chains).into_par_iter().map(|c| run_chain(model, settings, c)).collect();
    let unconstrained = DrawMatrix {
        names: model.names(),
        chains: settings.chains,
        iters: settings.iters,
        values: outputs.iter().flat_map(|o| o.unconstrained.iter().copied()).collect(),
    };
    let natural = DrawMatrix {
        names: model.natural_names(),
        chains: settings.chains,
        iters: settings.iters,
        values: outputs.iter().flat_map(|o| o.natural.iter().copied()).collect(),
    };
    let mut rhat = Vec::with_capacity(natural.width());
    let mut ess = Vec::with_capacity(natural.width());
    for j in 0..natural.width() {
        let chains = natural.by_chain(j);
        rhat.push(split_rhat(&chains));
        ess.push(ess_bulk(&chains));
    }
    let max_rhat = rhat.iter().copied().filter(|v| v.is_finite()).fold(1.0, f64::max);
    let min_ess = ess.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let mean_of = |f: fn(&ChainOutput) -> f64| outputs.iter().map(f).sum::<f64>() / outputs.len() as f64;
    let diagnostics = Diagnostics {
        global_acceptance: mean_of(|o| o.global_acceptance),
        unit_acceptance: mean_of(|o| o.unit_acceptance),
        rhat,
        ess_bulk: ess,
        max_rhat,
        min_ess,
    };
    let mut warnings = Vec::new();
    for (name, r) in natural.names.iter().zip(&diagnostics.rhat) {
        if *r >= RHAT_LIMIT {
            warnings.push(format!("{name}: R-hat {r:.4} >= {RHAT_LIMIT}"));
        }
    }
    Ok(PosteriorDraws { unconstrained, natural, settings: *settings, diagnostics, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y_i ~ N(θ_i, 1), θ_i ~ N(μ, τ²), μ ~ N(0, 10²), ln τ with τ ~ half-N(0, 1).
    struct EightSchools {
        y: Vec<f64>,
        sd: Vec<f64>,
    }

    impl Model for EightSchools {
        fn dim(&self) -> usize {
            2 + self.y.len()
        }
        fn names(&self) -> Vec<String> {
            let mut n = vec!["mu".to_string(), "log_tau".to_string()];
            n.extend((0..self.y.len()).map(|i| format!("theta[{i}]")));
            n
        }
        fn n_globals(&self) -> usize {
            2
        }
        fn units(&self) -> Vec<Range<usize>> {
            (0..self.y.len()).map(|i| 2 + i..3 + i).collect()
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            let (mu, lt) = (x[0], x[1]);
            let tau = lt.exp();
            let mut lp = -0.5 * (mu / 10.0).powi(2) - 0.5 * tau * tau + lt;
            for i in 0..self.y.len() {
                let th = x[2 + i];
                lp += -0.5 * ((th - mu) / tau).powi(2) - lt;
                lp += -0.5 * ((self.y[i] - th) / self.sd[i]).powi(2);
            }
            lp
        }
        fn random_effects(&self) -> Vec<RandomEffect> {
            vec![RandomEffect {
                name: "theta".into(),
                location: Some(0),
                location_value: 0.0,
                log_scale: 1,
                members: (2..2 + self.y.len()).collect(),
                member_information: self.sd.iter().map(|s| 1.0 / (s * s)).collect(),
                member_terms: Vec::new(),
            }]
        }
        fn scales(&self) -> Vec<f64> {
            vec![1.0; self.dim()]
        }
        fn initial(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
            let mut x = vec![0.0; self.dim()];
            x[1] = 0.0;
            x
        }
        fn natural_names(&self) -> Vec<String> {
            vec!["mu".into(), "tau".into()]
        }
        fn to_natural(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0], x[1].exp()]
        }
    }

    fn schools() -> EightSchools {
        EightSchools {
            y: vec![28.0, 8.0, -3.0, 7.0, -1.0, 1.0, 18.0, 12.0],
            sd: vec![15.0, 10.0, 16.0, 11.0, 9.0, 11.0, 10.0, 18.0],
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let m = schools();
        let s = Settings { chains: 2, warmup: 200, iters: 100, seed: 42 };
        let a = sample(&m, &s).unwrap();
        let b = sample(&m, &s).unwrap();
        assert_eq!(a.unconstrained.values, b.unconstrained.values);
        let c = sample(&m, &Settings { seed: 43, ..s }).unwrap();
        assert_ne!(a.unconstrained.values, c.unconstrained.values);
    }

    #[test]
    fn funnel_with_weak_data_mixes() {
        // Weak data: the centered posterior is a funnel in (tau, theta).
        let m = EightSchools { y: vec![0.5; 8], sd: vec![20.0; 8] };
        let draws = sample(&m, &Settings { chains: 4, warmup: 2000, iters: 4000, seed: 5 }).unwrap();
        assert!(draws.diagnostics.max_rhat < 1.01, "{:?}", draws.diagnostics);
        // The prior on tau is half-N(0,1); with uninformative data the
        // posterior mean of tau stays close to sqrt(2/pi) ≈ 0.80.
        let tau = draws.estimate("tau").unwrap();
        assert!((tau.mean - 0.80).abs() < 0.06, "{tau:?}");
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.25), 2.0);
        let e = estimate(&s);
        assert_eq!(e.mean, 3.0);
    }
}
