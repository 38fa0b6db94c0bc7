//! Generative simulation of flip campaigns under the learning-curve model
//! with the autocorrelated start-side protocol.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FlipDataset, FlipRecord, Side};
use crate::learning::{same_side_logit, T_SCALE};
use crate::mcmc::Estimate;
use crate::numerics::{inv_logit, logit};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonSpec {
    pub person_id: String,
    #[serde(default = "default_site")]
    pub site: String,
    pub theta: f64,
    #[serde(default = "half")]
    pub lambda: f64,
    #[serde(default)]
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoinSpec {
    pub coin_id: String,
    #[serde(default = "half")]
    pub alpha: f64,
}

/// `sequences` consecutive sequences of one person with one coin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub person_id: String,
    pub coin_id: String,
    pub sequences: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstStart {
    #[default]
    Fair,
    /// Heads, tails, heads, … over a person's sequences.
    Alternate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerativeConfig {
    pub persons: Vec<PersonSpec>,
    pub coins: Vec<CoinSpec>,
    /// Flips of each person in order; a person's flip index runs across
    /// all of their assignments.
    pub assignments: Vec<Assignment>,
    #[serde(default = "default_sequence_length")]
    pub flips_per_sequence: usize,
    #[serde(default)]
    pub first_start: FirstStart,
    /// Added to the scaled flip index.
    #[serde(default)]
    pub t_origin: f64,
    pub seed: u64,
}

fn default_site() -> String {
    "sim".into()
}

fn half() -> f64 {
    0.5
}

fn default_sequence_length() -> usize {
    100
}

impl GenerativeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.persons.is_empty() || self.coins.is_empty() {
            return Err(Error::InvalidArgument("need at least one person and one coin".into()));
        }
        if !(self.t_origin >= 0.0 && self.t_origin.is_finite()) {
            return Err(Error::InvalidArgument("t_origin must be finite and non-negative".into()));
        }
        if self.flips_per_sequence == 0 {
            return Err(Error::InvalidArgument("flips_per_sequence must be positive".into()));
        }
        let open = |p: f64| p > 0.0 && p < 1.0;
        for p in &self.persons {
            if !(open(p.theta) && open(p.lambda) && p.rho.is_finite()) {
                return Err(Error::InvalidArgument(format!("person {}: probabilities must lie in (0, 1)", p.person_id)));
            }
        }
        for c in &self.coins {
            if !open(c.alpha) {
                return Err(Error::InvalidArgument(format!("coin {}: alpha must lie in (0, 1)", c.coin_id)));
            }
        }
        for a in &self.assignments {
            if !self.persons.iter().any(|p| p.person_id == a.person_id) {
                return Err(Error::InvalidArgument(format!("assignment names unknown person {}", a.person_id)));
            }
            if !self.coins.iter().any(|c| c.coin_id == a.coin_id) {
                return Err(Error::InvalidArgument(format!("assignment names unknown coin {}", a.coin_id)));
            }
        }
        Ok(())
    }

    pub fn n_flips(&self) -> usize {
        self.assignments.iter().map(|a| a.sequences).sum::<usize>() * self.flips_per_sequence
    }
}

/// Probability that a flip starting on `start` lands heads.
pub fn heads_probability(alpha: f64, theta: f64, lambda: f64, rho: f64, t: f64, start: Side) -> f64 {
    inv_logit(logit(alpha) + start.sign() * same_side_logit(logit(theta), logit(lambda), rho, t))
}

fn simulate_person(cfg: &GenerativeConfig, k: usize) -> Vec<FlipRecord> {
    let p = &cfg.persons[k];
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(k as u64 + 1);
    let (lt, ll) = (logit(p.theta), logit(p.lambda));
    let mut out = Vec::new();
    let mut index = 0u64;
    let mut seq = 0usize;
    for a in cfg.assignments.iter().filter(|a| a.person_id == p.person_id) {
        let la = logit(cfg.coins.iter().find(|c| c.coin_id == a.coin_id).expect("validated coin").alpha);
        for _ in 0..a.sequences {
            let mut start = match cfg.first_start {
                FirstStart::Fair if rng.random_bool(0.5) => Side::Heads,
                FirstStart::Fair => Side::Tails,
                FirstStart::Alternate if seq.is_multiple_of(2) => Side::Heads,
                FirstStart::Alternate => Side::Tails,
            };
            let sequence_id = format!("{}-{}", p.person_id, seq);
            for _ in 0..cfg.flips_per_sequence {
                let t = cfg.t_origin + index as f64 / T_SCALE;
                let mu = la + start.sign() * same_side_logit(lt, ll, p.rho, t);
                let landed = if rng.random::<f64>() < inv_logit(mu) { Side::Heads } else { Side::Tails };
                out.push(FlipRecord {
                    person_id: p.person_id.clone(),
                    coin_id: a.coin_id.clone(),
                    site: p.site.clone(),
                    sequence_id: sequence_id.clone(),
                    flip_index: index,
                    start,
                    landed,
                });
                start = landed;
                index += 1;
            }
            seq += 1;
        }
    }
    out
}

/// Simulates every person on an independent random stream derived from the
/// seed; records are emitted person by person in configuration order.
pub fn simulate(cfg: &GenerativeConfig) -> Result<FlipDataset> {
    cfg.validate()?;
    let per_person: Vec<Vec<FlipRecord>> = (0..cfg.persons.len()).into_par_iter().map(|k| simulate_person(cfg, k)).collect();
    FlipDataset::from_records(per_person.into_iter().flatten())
}

/// Population from which persons and coins are drawn: logit-scale normal
/// offsets around the listed means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub persons: usize,
    pub coins: usize,
    #[serde(default = "default_coins_per_person")]
    pub coins_per_person: usize,
    pub sequences_per_person: usize,
    #[serde(default = "default_sequence_length")]
    pub flips_per_sequence: usize,
    #[serde(default = "half")]
    pub alpha_mu: f64,
    #[serde(default)]
    pub sigma_alpha: f64,
    #[serde(default = "half")]
    pub theta_mu: f64,
    #[serde(default)]
    pub sigma_theta: f64,
    #[serde(default = "half")]
    pub lambda_mu: f64,
    #[serde(default)]
    pub sigma_lambda: f64,
    #[serde(default)]
    pub rho_mu: f64,
    #[serde(default)]
    pub sigma_rho: f64,
    #[serde(default)]
    pub first_start: FirstStart,
    #[serde(default)]
    pub t_origin: f64,
}

fn default_coins_per_person() -> usize {
    1
}

impl PopulationSpec {
    /// Constant same-side bias `beta` with person spread `sigma_beta`.
    pub fn constant(persons: usize, coins: usize, sequences_per_person: usize, beta: f64, sigma_beta: f64) -> Self {
        PopulationSpec {
            persons,
            coins,
            coins_per_person: 1,
            sequences_per_person,
            flips_per_sequence: 100,
            alpha_mu: 0.5,
            sigma_alpha: 0.0,
            theta_mu: beta,
            sigma_theta: sigma_beta,
            lambda_mu: 0.5,
            sigma_lambda: 0.0,
            rho_mu: 0.0,
            sigma_rho: 0.0,
            first_start: FirstStart::Fair,
            t_origin: 0.0,
        }
    }

    /// Draws the unit-level parameters; person `k` uses coins
    /// `k, k + 1, …` (mod the number of coins) in equal consecutive blocks.
    pub fn draw(&self, seed: u64) -> Result<GenerativeConfig> {
        if self.persons == 0 || self.coins == 0 || self.coins_per_person == 0 || self.sequences_per_person == 0 {
            return Err(Error::InvalidArgument("population needs persons, coins and sequences".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let mut z = || rng.sample::<f64, _>(StandardNormal);
        let coins: Vec<CoinSpec> = (0..self.coins)
            .map(|j| CoinSpec { coin_id: format!("c{j}"), alpha: inv_logit(logit(self.alpha_mu) + self.sigma_alpha * z()) })
            .collect();
        let persons: Vec<PersonSpec> = (0..self.persons)
            .map(|k| PersonSpec {
                person_id: format!("p{k}"),
                site: default_site(),
                theta: inv_logit(logit(self.theta_mu) + self.sigma_theta * z()),
                lambda: inv_logit(logit(self.lambda_mu) + self.sigma_lambda * z()),
                rho: self.rho_mu + self.sigma_rho * z(),
            })
            .collect();
        let per = self.coins_per_person.min(self.coins);
        let mut assignments = Vec::new();
        for k in 0..self.persons {
            for m in 0..per {
                let sequences = self.sequences_per_person / per + usize::from(m < self.sequences_per_person % per);
                if sequences > 0 {
                    assignments.push(Assignment {
                        person_id: format!("p{k}"),
                        coin_id: format!("c{}", (k + m) % self.coins),
                        sequences,
                    });
                }
            }
        }
        Ok(GenerativeConfig {
            persons,
            coins,
            assignments,
            flips_per_sequence: self.flips_per_sequence,
            first_start: self.first_start,
            t_origin: self.t_origin,
            seed,
        })
    }

    /// Population-level truths under the names used by the fitted models.
    pub fn truth(&self) -> Vec<(String, f64)> {
        [
            ("alpha_mu", self.alpha_mu),
            ("sigma_alpha", self.sigma_alpha),
            ("beta_mu", self.theta_mu),
            ("sigma_beta", self.sigma_theta),
            ("theta_mu", self.theta_mu),
            ("sigma_theta", self.sigma_theta),
            ("lambda_mu", self.lambda_mu),
            ("sigma_lambda", self.sigma_lambda),
            ("rho_mu", self.rho_mu),
            ("sigma_rho", self.sigma_rho),
        ]
        .into_iter()
        .map(|(n, v)| (n.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub ci95: [f64; 2],
    pub covered: bool,
}

/// One row per fitted parameter that has a known truth.
pub fn recovery_report(truth: &[(String, f64)], fitted: &[(String, Estimate)]) -> Result<Vec<RecoveryRow>> {
    fitted
        .iter()
        .map(|(name, e)| {
            let &(_, t) = truth
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::InvalidArgument(format!("no true value for parameter {name}")))?;
            Ok(RecoveryRow {
                parameter: name.clone(),
                truth: t,
                mean: e.mean,
                ci95: e.ci95,
                covered: e.ci95[0] <= t && t <= e.ci95[1],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub parameter: String,
    pub covered: usize,
    pub replicates: usize,
}

/// Coverage tallies across replicate reports; every report must list the
/// same parameters.
pub fn coverage(reports: &[Vec<RecoveryRow>]) -> Result<Vec<CoverageRow>> {
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    let mut rows: Vec<CoverageRow> =
        first.iter().map(|r| CoverageRow { parameter: r.parameter.clone(), covered: 0, replicates: 0 }).collect();
    for rep in reports {
        if rep.len() != rows.len() || rep.iter().zip(&rows).any(|(a, b)| a.parameter != b.parameter) {
            return Err(Error::InvalidArgument("replicate reports list different parameters".into()));
        }
        for (row, r) in rows.iter_mut().zip(rep) {
            row.covered += r.covered as usize;
            row.replicates += 1;
        }
    }
    Ok(rows)
}
