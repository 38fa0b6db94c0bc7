//! Model comparison over the sixteen hierarchical models: marginal
//! likelihoods, posterior model probabilities and inclusion Bayes factors.

pub mod bridge;

use rayon::prelude::*;
use serde::Serialize;

pub use bridge::{bridge_log_ml, BridgeEstimate, BridgeSettings};

use crate::data::Cells;
use crate::hier::{sample_posterior, HierModel, ModelSpec, PriorSet};
use crate::mcmc::{Diagnostics, Settings};
use crate::numerics::ln_sum_exp;
use crate::{Error, Result};

/// `M1 … M16` in order.
pub fn enumerate_models() -> Vec<ModelSpec> {
    (1..=16).map(|i| ModelSpec::from_index(i).unwrap()).collect()
}

pub fn all_models() -> Vec<ModelSpec> {
    enumerate_models()
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalLikelihood {
    pub model: ModelSpec,
    pub label: String,
    pub log_ml: f64,
    pub relative_mc_error: f64,
    pub iterations_used: usize,
    /// `None` for models without free parameters.
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelPosterior {
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
    pub log_mls: Vec<f64>,
}

/// Posterior model probabilities from log marginal likelihoods.
pub fn posterior_model_probs(log_mls: &[f64], prior_probs: &[f64]) -> Result<ModelPosterior> {
    if log_mls.len() != prior_probs.len() || log_mls.is_empty() {
        return Err(Error::InvalidArgument("log MLs and prior probabilities differ in length".into()));
    }
    if let Some(i) = log_mls.iter().position(|v| !v.is_finite()) {
        return Err(Error::Estimation(format!("log marginal likelihood of model {} is not finite", i + 1)));
    }
    let total: f64 = prior_probs.iter().sum();
    if prior_probs.iter().any(|p| !(*p >= 0.0)) || !(total > 0.0) {
        return Err(Error::InvalidArgument("prior model probabilities must be non-negative".into()));
    }
    let prior: Vec<f64> = prior_probs.iter().map(|p| p / total).collect();
    let terms: Vec<f64> = log_mls.iter().zip(&prior).map(|(l, p)| l + p.ln()).collect();
    let norm = ln_sum_exp(&terms);
    let posterior = terms.iter().map(|t| (t - norm).exp()).collect();
    Ok(ModelPosterior { prior, posterior, log_mls: log_mls.to_vec() })
}

/// Change from prior to posterior odds of the models in `members` against
/// the rest. Zero posterior mass outside gives `+∞`.
pub fn inclusion_bf(mp: &ModelPosterior, members: &[bool]) -> Result<f64> {
    if members.len() != mp.prior.len() || members.iter().all(|m| *m) || members.iter().all(|m| !*m) {
        return Err(Error::InvalidArgument("inclusion set must be a non-empty proper subset".into()));
    }
    let sum = |v: &[f64], inside: bool| -> f64 {
        v.iter().zip(members).filter(|(_, m)| **m == inside).map(|(p, _)| p).sum()
    };
    let (post_a, post_b) = (sum(&mp.posterior, true), sum(&mp.posterior, false));
    let (prior_a, prior_b) = (sum(&mp.prior, true), sum(&mp.prior, false));
    if post_b == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(post_a / post_b / (prior_a / prior_b))
}

/// Inclusion Bayes factors of the four model components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InclusionBfs {
    pub same_side: f64,
    pub heads_tails: f64,
    pub person_heterogeneity: f64,
    pub coin_heterogeneity: f64,
}

pub fn component_inclusion_bfs(specs: &[ModelSpec], mp: &ModelPosterior) -> Result<InclusionBfs> {
    let set = |f: fn(&ModelSpec) -> bool| specs.iter().map(f).collect::<Vec<bool>>();
    Ok(InclusionBfs {
        same_side: inclusion_bf(mp, &set(|s| s.has_same_side_bias))?,
        heads_tails: inclusion_bf(mp, &set(|s| s.has_heads_tails_bias))?,
        person_heterogeneity: inclusion_bf(mp, &set(|s| s.has_person_heterogeneity))?,
        coin_heterogeneity: inclusion_bf(mp, &set(|s| s.has_coin_heterogeneity))?,
    })
}

/// Fits one model and bridges its marginal likelihood. The bridge seed is
/// derived from the sampling seed and the model index.
pub fn fit_log_ml(spec: ModelSpec, priors: &PriorSet, cells: &Cells, settings: &Settings) -> Result<MarginalLikelihood> {
    let label = spec.label();
    let model = HierModel::new(spec, *priors, cells)?;
    use crate::mcmc::Model;
    if model.dim() == 0 {
        return Ok(MarginalLikelihood {
            model: spec,
            label,
            log_ml: model.fixed_log_likelihood(),
            relative_mc_error: 0.0,
            iterations_used: 0,
            diagnostics: None,
        });
    }
    let fit = sample_posterior(spec, *priors, cells, settings)?;
    let bs = BridgeSettings { seed: settings.seed.wrapping_mul(31).wrapping_add(spec.index() as u64), ..Default::default() };
    let est = bridge_log_ml(&fit.model, &fit.draws, &bs).map_err(|e| Error::Estimation(format!("{label}: {e}")))?;
    Ok(MarginalLikelihood {
        model: spec,
        label,
        log_ml: est.log_ml,
        relative_mc_error: est.relative_mc_error,
        iterations_used: est.iterations,
        diagnostics: Some(fit.draws.diagnostics),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelComparison {
    pub marginals: Vec<MarginalLikelihood>,
    pub posterior: ModelPosterior,
    pub inclusion_bfs: InclusionBfs,
}

impl ModelComparison {
    pub fn max_relative_error(&self) -> f64 {
        self.marginals.iter().map(|m| m.relative_mc_error).fold(0.0, f64::max)
    }

    pub fn max_rhat(&self) -> f64 {
        self.marginals.iter().filter_map(|m| m.diagnostics.as_ref()).map(|d| d.max_rhat).fold(1.0, f64::max)
    }
}

/// Fits every model in `specs` (in parallel) with equal prior probabilities.
pub fn compare_models(cells: &Cells, priors: &PriorSet, settings: &Settings, specs: &[ModelSpec]) -> Result<ModelComparison> {
    let marginals = specs
        .par_iter()
        .map(|&spec| fit_log_ml(spec, priors, cells, settings))
        .collect::<Result<Vec<_>>>()?;
    let log_mls: Vec<f64> = marginals.iter().map(|m| m.log_ml).collect();
    let posterior = posterior_model_probs(&log_mls, &vec![1.0; specs.len()])?;
    let inclusion_bfs = component_inclusion_bfs(specs, &posterior)?;
    Ok(ModelComparison { marginals, posterior, inclusion_bfs })
}
