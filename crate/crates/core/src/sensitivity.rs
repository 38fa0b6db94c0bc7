//! Normal-moment priors and Bayes factor functions: the Bayes factor as a
//! function of the prior mode.

use std::f64::consts::{LN_10, LN_2, PI};
use std::io::Write;

use serde::Serialize;

use crate::bma::{self, InclusionBfs};
use crate::data::Cells;
use crate::hier::{ModelSpec, PriorSet};
use crate::mcmc::Settings;
use crate::numerics::optimize::golden_max;
use crate::numerics::{integrate_ln, inv_logit, ln_sigmoid, logit, IntegrationOptions};
use crate::{Error, Result};

/// Density `2x² / (√π φ³) · exp(−x²/φ²)`, doubled on `x > 0` when
/// `positive_only`. Its modes are at `±φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalMomentPrior {
    pub phi: f64,
    pub positive_only: bool,
}

impl NormalMomentPrior {
    pub fn new(phi: f64, positive_only: bool) -> Result<Self> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::DegeneratePrior(format!("normal-moment mode must be positive, got {phi}")));
        }
        Ok(NormalMomentPrior { phi, positive_only })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        nm_logpdf(x, self)
    }
}

pub fn nm_logpdf(x: f64, prior: &NormalMomentPrior) -> f64 {
    if prior.positive_only && x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let phi = prior.phi.abs();
    let base = LN_2 + 2.0 * x.abs().ln() - 0.5 * PI.ln() - 3.0 * phi.ln() - (x / phi).powi(2);
    if prior.positive_only {
        base + LN_2
    } else {
        base
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BffKind {
    /// Positive-truncated prior on `logit β`.
    SameSide,
    /// Symmetric prior on `logit α`.
    HeadsTails,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BffPoint {
    pub phi: f64,
    pub mode_probability: f64,
    pub log_bf: f64,
    /// Relative Monte Carlo error, for grids computed by sampling.
    pub mc_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BffGrid {
    pub label: String,
    pub points: Vec<BffPoint>,
    /// The refined maximum, when computed.
    pub maximum: Option<BffPoint>,
    /// Grid points that failed, with their error message.
    pub failures: Vec<(f64, String)>,
}

impl BffGrid {
    pub fn best_point(&self) -> Option<&BffPoint> {
        self.points.iter().filter(|p| p.log_bf.is_finite()).max_by(|a, b| a.log_bf.total_cmp(&b.log_bf))
    }
}

/// `0` followed by `n` equally spaced modes on `[lo, hi]`.
pub fn default_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    if n == 1 {
        g.push(lo);
    } else {
        g.extend((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64));
    }
    g
}

pub const DEFAULT_GRID_POINTS: usize = 17;

pub fn default_phi_grid() -> Vec<f64> {
    default_grid(0.005, 0.08, DEFAULT_GRID_POINTS)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) || grid[0] < 0.0 {
        return Err(Error::InvalidArgument("φ grid must be non-negative and strictly increasing".into()));
    }
    Ok(())
}

/// `ln BF₁₀` for `k` successes in `n` trials against success probability ½,
/// with a normal-moment prior of mode `phi` on the logit.
pub fn ln_bf_normal_moment(k: u64, n: u64, phi: f64, kind: BffKind) -> Result<f64> {
    if phi == 0.0 {
        return Ok(0.0);
    }
    let prior = NormalMomentPrior::new(phi, kind == BffKind::SameSide)?;
    let (kf, nf) = (k as f64, n as f64);
    let g = |x: f64| kf * ln_sigmoid(x) + (nf - kf) * ln_sigmoid(-x) + prior.ln_pdf(x);
    let x_hat = logit((kf + 0.5) / (nf + 1.0));
    let width = 2.0 / (nf + 1.0).sqrt();
    let bound = 12.0 * phi + x_hat.abs() + 40.0 * width;
    let lo = if prior.positive_only { 0.0 } else { -bound };
    let mut hints = vec![(phi, phi / 4.0), (x_hat, width)];
    if !prior.positive_only {
        hints.push((-phi, phi / 4.0));
    }
    // the posterior mode lies between the prior mode and the data mode
    let (mode, _) = golden_max(g, lo.max(-bound) + 1e-12, bound, 1e-10);
    hints.push((mode, width.min(phi)));
    let opts = IntegrationOptions { rel_tol: 1e-9, ..Default::default() };
    let ln_m1 = integrate_ln(g, lo, bound, &hints, opts)?;
    Ok(ln_m1 - nf * (-LN_2))
}

/// Bayes factor function for pooled counts, refining the maximum by
/// golden-section search between the neighbours of the best grid point.
pub fn bff_nonhier(k: u64, n: u64, phi_grid: &[f64], kind: BffKind) -> Result<BffGrid> {
    check_grid(phi_grid)?;
    let points = phi_grid
        .iter()
        .map(|&phi| {
            Ok(BffPoint { phi, mode_probability: inv_logit(phi), log_bf: ln_bf_normal_moment(k, n, phi, kind)?, mc_error: None })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grid = BffGrid {
        label: match kind {
            BffKind::SameSide => "same-side".into(),
            BffKind::HeadsTails => "heads-tails".into(),
        },
        points,
        maximum: None,
        failures: Vec::new(),
    };
    if let Some(best) = grid.best_point() {
        let i = grid.points.iter().position(|p| p.phi == best.phi).unwrap();
        let lo = grid.points[i.saturating_sub(1)].phi.max(1e-6);
        let hi = grid.points[(i + 1).min(grid.points.len() - 1)].phi;
        if hi > lo {
            let (phi, _) = golden_max(|p| ln_bf_normal_moment(k, n, p, kind).unwrap_or(f64::NEG_INFINITY), lo, hi, 1e-7);
            grid.maximum = Some(BffPoint {
                phi,
                mode_probability: inv_logit(phi),
                log_bf: ln_bf_normal_moment(k, n, phi, kind)?,
                mc_error: None,
            });
        }
    }
    Ok(grid)
}

/// Which testing prior is swapped for a normal-moment prior of varying mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HierTarget {
    SameSide,
    HeadsTails,
    PersonHeterogeneity,
    CoinHeterogeneity,
}

/// Modes of the normal-moment priors held fixed while one is varied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedModes {
    pub phi_beta: f64,
    pub phi_alpha: f64,
    pub phi_sigma_beta: f64,
    pub phi_sigma_alpha: f64,
}

impl Default for FixedModes {
    fn default() -> Self {
        FixedModes { phi_beta: 0.04, phi_alpha: 0.04, phi_sigma_beta: 0.02, phi_sigma_alpha: 0.02 }
    }
}

impl HierTarget {
    fn priors(self, phi: f64, fixed: &FixedModes) -> PriorSet {
        let mut f = *fixed;
        match self {
            HierTarget::SameSide => f.phi_beta = phi,
            HierTarget::HeadsTails => f.phi_alpha = phi,
            HierTarget::PersonHeterogeneity => f.phi_sigma_beta = phi,
            HierTarget::CoinHeterogeneity => f.phi_sigma_alpha = phi,
        }
        PriorSet::normal_moment(f.phi_beta, f.phi_alpha, f.phi_sigma_beta, f.phi_sigma_alpha)
    }

    fn pick(self, bfs: &InclusionBfs) -> f64 {
        match self {
            HierTarget::SameSide => bfs.same_side,
            HierTarget::HeadsTails => bfs.heads_tails,
            HierTarget::PersonHeterogeneity => bfs.person_heterogeneity,
            HierTarget::CoinHeterogeneity => bfs.coin_heterogeneity,
        }
    }

    /// Mode reported on the probability scale: a probability for the
    /// locations, a standard deviation (`φ/4`) for the spreads.
    fn mode_probability(self, phi: f64) -> f64 {
        match self {
            HierTarget::SameSide | HierTarget::HeadsTails => inv_logit(phi),
            _ => phi * 0.25,
        }
    }
}

/// Hierarchical Bayes factor function: at every grid point the 16-model
/// comparison is rerun with normal-moment priors and the target's inclusion
/// Bayes factor recorded. Failed grid points are reported, not fatal.
pub fn bff_hier(
    target: HierTarget,
    phi_grid: &[f64],
    fixed: &FixedModes,
    cells: &Cells,
    settings: &Settings,
) -> Result<BffGrid> {
    check_grid(phi_grid)?;
    let mut grid = BffGrid {
        label: format!("{target:?}"),
        points: Vec::new(),
        maximum: None,
        failures: Vec::new(),
    };
    for &phi in phi_grid {
        if phi == 0.0 {
            grid.points.push(BffPoint { phi, mode_probability: target.mode_probability(0.0), log_bf: 0.0, mc_error: None });
            continue;
        }
        match bma::compare_models(cells, &target.priors(phi, fixed), settings, &bma::all_models()) {
            Ok(cmp) => {
                let bf = target.pick(&cmp.inclusion_bfs);
                grid.points.push(BffPoint {
                    phi,
                    mode_probability: target.mode_probability(phi),
                    log_bf: bf.ln(),
                    mc_error: Some(cmp.max_relative_error()),
                });
            }
            Err(e) => grid.failures.push((phi, e.to_string())),
        }
    }
    Ok(grid)
}

pub fn write_bff_csv<W: Write>(grid: &BffGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phi", "mode_probability", "log10_bf"])?;
    for p in &grid.points {
        w.write_record([format!("{}", p.phi), format!("{:.6}", p.mode_probability), format!("{:.6}", p.log_bf / LN_10)])?;
    }
    w.flush()?;
    Ok(())
}

/// Checks that a spec selects a model with the target component present.
pub fn target_present(target: HierTarget, spec: ModelSpec) -> bool {
    match target {
        HierTarget::SameSide => spec.has_same_side_bias,
        HierTarget::HeadsTails => spec.has_heads_tails_bias,
        HierTarget::PersonHeterogeneity => spec.has_person_heterogeneity,
        HierTarget::CoinHeterogeneity => spec.has_coin_heterogeneity,
    }
}
