//! Site effects on the same-side bias through sum-to-zero orthonormal
//! contrasts.

use serde::Serialize;

use super::{HierModel, ModelSpec, PriorSet};
use crate::data::Cells;
use crate::mcmc::{self, estimate, Diagnostics, Estimate, Settings};
use crate::{Error, Result};

pub const DEFAULT_PRIOR_SD: f64 = 0.2;

/// Normalized Helmert contrasts: an `s × (s − 1)` row-major matrix whose
/// columns are orthonormal and each sum to zero.
pub fn helmert(s: usize) -> Vec<f64> {
    let m = s.saturating_sub(1);
    let mut c = vec![0.0; s * m];
    for j in 0..m {
        let k = (j + 1) as f64;
        let norm = (k * (k + 1.0)).sqrt();
        for i in 0..=j {
            c[i * m + j] = 1.0 / norm;
        }
        c[(j + 1) * m + j] = -k / norm;
    }
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct SiteDesign {
    pub names: Vec<String>,
    /// Row-major `names.len() × (names.len() − 1)`.
    pub contrast: Vec<f64>,
    pub person_site: Vec<usize>,
    pub prior_sd: f64,
}

impl SiteDesign {
    pub fn from_cells(cells: &Cells, prior_sd: f64) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut person_site = Vec::with_capacity(cells.persons.len());
        for s in &cells.person_sites {
            let i = match names.iter().position(|n| n == s) {
                Some(i) => i,
                None => {
                    names.push(s.clone());
                    names.len() - 1
                }
            };
            person_site.push(i);
        }
        if names.len() < 2 {
            return Err(Error::InvalidArgument("site contrasts need at least two sites".into()));
        }
        if !(prior_sd > 0.0) {
            return Err(Error::DegeneratePrior(format!("site prior sd must be positive, got {prior_sd}")));
        }
        Ok(SiteDesign { contrast: helmert(names.len()), names, person_site, prior_sd })
    }

    pub fn n_contrasts(&self) -> usize {
        self.names.len() - 1
    }

    pub fn coefficient(&self, site: usize, c: usize) -> f64 {
        self.contrast[site * self.n_contrasts() + c]
    }

    /// Logit-scale deviation of `site` given contrast coefficients `eta`.
    pub fn effect(&self, eta: &[f64], site: usize) -> f64 {
        let m = self.n_contrasts();
        self.contrast[site * m..(site + 1) * m].iter().zip(eta).map(|(c, e)| c * e).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SiteEffect {
    pub site: String,
    pub persons: usize,
    /// Deviation of the site's same-side probability from the overall one.
    pub delta: Estimate,
    /// Set for sites with a single person, whose effect is barely separable
    /// from that person's own deviation.
    pub wide: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SiteContrasts {
    pub sites: Vec<String>,
    pub contrast: Vec<f64>,
    pub effects: Vec<SiteEffect>,
    pub beta_mu: Estimate,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
}

pub fn fit_site_contrasts(cells: &Cells, priors: PriorSet, prior_sd: f64, settings: &Settings) -> Result<SiteContrasts> {
    let design = SiteDesign::from_cells(cells, prior_sd)?;
    let model = HierModel::with_sites(ModelSpec::FULL, priors, cells, design.clone())?;
    let draws = mcmc::sample(&model, settings)?;
    let effects = design
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let persons = design.person_site.iter().filter(|&&s| s == i).count();
            let col = draws.natural.column(&format!("delta[{name}]")).expect("site column");
            SiteEffect { site: name.clone(), persons, delta: estimate(&col), wide: persons < 2 }
        })
        .collect();
    Ok(SiteContrasts {
        beta_mu: draws.estimate("beta_mu").expect("beta_mu column"),
        sites: design.names,
        contrast: design.contrast,
        effects,
        diagnostics: draws.diagnostics,
        warnings: draws.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn helmert_is_orthonormal_and_centred() {
        for s in 2..=8 {
            let c = helmert(s);
            let m = s - 1;
            for a in 0..m {
                let sum: f64 = (0..s).map(|i| c[i * m + a]).sum();
                assert!(sum.abs() < 1e-12);
                for b in 0..m {
                    let dot: f64 = (0..s).map(|i| c[i * m + a] * c[i * m + b]).sum();
                    assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
        assert_eq!(helmert(6).len(), 30);
    }

    #[test]
    fn effects_sum_to_zero() {
        let d = SiteDesign {
            names: (0..4).map(|i| format!("s{i}")).collect(),
            contrast: helmert(4),
            person_site: vec![0, 1, 2, 3],
            prior_sd: 0.2,
        };
        let eta = [0.3, -0.1, 0.25];
        let total: f64 = (0..4).map(|s| d.effect(&eta, s)).sum();
        assert!(total.abs() < 1e-12);
    }
}
