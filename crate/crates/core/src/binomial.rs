//! Nonhierarchical tests on pooled counts: informed Bayes factors under a
//! truncated beta or a symmetric beta alternative, uniform-prior intervals
//! and the exact two-sided binomial test.

use std::f64::consts::{LN_10, LN_2};

use serde::{Deserialize, Serialize};

use crate::numerics::{
    beta_quantile, ln_add_exp, ln_beta_interval_mass, ln_reg_inc_beta, ln_reg_inc_beta_upper,
    log_beta, log_gamma, NumericsError,
};
use crate::{Error, Result};

/// Beta(a, b) restricted to `[lower, upper]` and renormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedBetaPrior {
    pub a: f64,
    pub b: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedBetaPrior {
    pub fn new(a: f64, b: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::DegeneratePrior(format!("shapes must be positive, got ({a}, {b})")));
        }
        if !(0.0 <= lower && lower < upper && upper <= 1.0) {
            return Err(Error::DegeneratePrior(format!("bad truncation [{lower}, {upper}]")));
        }
        let p = TruncatedBetaPrior { a, b, lower, upper };
        if !p.ln_mass()?.is_finite() {
            return Err(Error::DegeneratePrior(format!("Beta({a}, {b}) has no mass on [{lower}, {upper}]")));
        }
        Ok(p)
    }

    /// The same-side alternative: Beta(5100, 4900) on [0.5, 1].
    pub fn same_side() -> Self {
        TruncatedBetaPrior { a: 5100.0, b: 4900.0, lower: 0.5, upper: 1.0 }
    }

    /// Log of the Beta(a, b) probability of the truncation interval.
    pub fn ln_mass(&self) -> Result<f64, NumericsError> {
        ln_beta_interval_mass(self.lower, self.upper, self.a, self.b)
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64, NumericsError> {
        if x < self.lower || x > self.upper {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(crate::numerics::beta_ln_pdf(x, self.a, self.b)? - self.ln_mass()?)
    }

    /// Quantile of the truncated distribution, by bisection on the log mass
    /// of `[lower, x]`.
    pub fn quantile(&self, q: f64) -> Result<f64, NumericsError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(NumericsError::Domain { function: "truncated_beta_quantile", value: q });
        }
        let total = self.ln_mass()?;
        let target = q.ln() + total;
        let (mut lo, mut hi) = (self.lower, self.upper);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if ln_beta_interval_mass(self.lower, mid, self.a, self.b)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Mean, via `E[x] = a/(a+b) · P_{a+1,b}(interval) / P_{a,b}(interval)`.
    pub fn mean(&self) -> Result<f64, NumericsError> {
        let shifted = ln_beta_interval_mass(self.lower, self.upper, self.a + 1.0, self.b)?;
        Ok(self.a / (self.a + self.b) * (shifted - self.ln_mass()?).exp())
    }

    /// Conjugate update with `k` successes in `n` trials.
    pub fn update(&self, k: u64, n: u64) -> TruncatedBetaPrior {
        TruncatedBetaPrior { a: self.a + k as f64, b: self.b + (n - k) as f64, ..*self }
    }

    fn describe(&self) -> String {
        if self.lower == 0.0 && self.upper == 1.0 {
            format!("Beta({}, {})", self.a, self.b)
        } else {
            format!("Beta({}, {}) truncated to [{}, {}]", self.a, self.b, self.lower, self.upper)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinomialTestResult {
    pub test: String,
    pub k: u64,
    pub n: u64,
    pub log_bf10: f64,
    pub log10_bf10: f64,
    pub bf10: f64,
    pub mean: f64,
    pub ci95: [f64; 2],
    pub prior: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

fn check_counts(k: u64, n: u64) -> Result<()> {
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds N = {n}")));
    }
    Ok(())
}

/// BF10 of a truncated-beta alternative against p = 1/2. The binomial
/// coefficient cancels and is never formed.
pub fn bf_informed_binomial(k: u64, n: u64, prior: &TruncatedBetaPrior) -> Result<BinomialTestResult> {
    check_counts(k, n)?;
    let prior = TruncatedBetaPrior::new(prior.a, prior.b, prior.lower, prior.upper)?;
    let post = prior.update(k, n);
    let log_bf10 = log_beta(post.a, post.b)? + post.ln_mass()? - log_beta(prior.a, prior.b)? - prior.ln_mass()?
        + n as f64 * LN_2;
    Ok(BinomialTestResult {
        test: "informed".into(),
        k,
        n,
        log_bf10,
        log10_bf10: log_bf10 / LN_10,
        bf10: log_bf10.exp(),
        mean: post.mean()?,
        ci95: [post.quantile(0.025)?, post.quantile(0.975)?],
        prior: prior.describe(),
        p_value: None,
    })
}

/// BF10 of a Beta(a, b) alternative against p = 1/2.
pub fn bf_symmetric_binomial(h: u64, n: u64, a: f64, b: f64) -> Result<BinomialTestResult> {
    check_counts(h, n)?;
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::DegeneratePrior(format!("shapes must be positive, got ({a}, {b})")));
    }
    let (pa, pb) = (a + h as f64, b + (n - h) as f64);
    let log_bf10 = log_beta(pa, pb)? - log_beta(a, b)? + n as f64 * LN_2;
    Ok(BinomialTestResult {
        test: "symmetric".into(),
        k: h,
        n,
        log_bf10,
        log10_bf10: log_bf10 / LN_10,
        bf10: log_bf10.exp(),
        mean: pa / (pa + pb),
        ci95: [beta_quantile(0.025, pa, pb)?, beta_quantile(0.975, pa, pb)?],
        prior: format!("Beta({a}, {b})"),
        p_value: None,
    })
}

/// Posterior mean and central 95% interval under a uniform prior.
pub fn posterior_interval_uniform(k: u64, n: u64) -> Result<(f64, f64, f64)> {
    check_counts(k, n)?;
    let (a, b) = ((k + 1) as f64, (n - k + 1) as f64);
    Ok((a / (a + b), beta_quantile(0.025, a, b)?, beta_quantile(0.975, a, b)?))
}

fn ln_binom_pmf(i: u64, n: u64, ln_p: f64, ln_q: f64) -> f64 {
    let (i_f, n_f) = (i as f64, n as f64);
    let ln_choose = log_gamma(n_f + 1.0).unwrap() - log_gamma(i_f + 1.0).unwrap() - log_gamma(n_f - i_f + 1.0).unwrap();
    ln_choose + i_f * ln_p + (n_f - i_f) * ln_q
}

/// `ln P(X <= k)` for X ~ Binomial(n, p).
fn ln_cdf(k: u64, n: u64, p: f64) -> Result<f64, NumericsError> {
    if k >= n {
        return Ok(0.0);
    }
    ln_reg_inc_beta_upper(p, (k + 1) as f64, (n - k) as f64)
}

/// `ln P(X >= y)` for X ~ Binomial(n, p).
fn ln_sf(y: u64, n: u64, p: f64) -> Result<f64, NumericsError> {
    if y == 0 {
        return Ok(0.0);
    }
    if y > n {
        return Ok(f64::NEG_INFINITY);
    }
    ln_reg_inc_beta(p, y as f64, (n - y + 1) as f64)
}

/// Natural log of the two-sided exact binomial p-value (minimum-likelihood
/// convention: sum the probabilities of all outcomes no more likely than the
/// observed one, with a 1e-7 relative tolerance on ties).
pub fn exact_binomial_ln_p(k: u64, n: u64, p0: f64) -> Result<f64> {
    check_counts(k, n)?;
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(NumericsError::domain("exact_binomial_p", p0).into());
    }
    if n == 0 {
        return Ok(0.0);
    }
    let (ln_p, ln_q) = (p0.ln(), (-p0).ln_1p());
    let ln_d = |i: u64| ln_binom_pmf(i, n, ln_p, ln_q);
    let tol = (1.0 + 1e-7f64).ln();
    let cutoff = ln_d(k) + tol;
    let mode = (((n + 1) as f64) * p0).floor().min(n as f64) as u64;
    // The pmf is unimodal; the mode may sit at `mode` or `mode - 1`.
    let mode = if mode > 0 && ln_d(mode - 1) > ln_d(mode) { mode - 1 } else { mode };
    if (ln_d(mode) - ln_d(k)).abs() <= tol {
        return Ok(0.0);
    }
    let ln_p_value = if k < mode {
        // smallest y > mode with d(y) <= d(k)
        let (mut lo, mut hi) = (mode, n + 1);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ln_d(mid) <= cutoff {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        ln_add_exp(ln_cdf(k, n, p0)?, ln_sf(hi, n, p0)?)
    } else {
        // largest y < mode with d(y) <= d(k)
        let (mut lo, mut hi) = (-1i64, mode as i64);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ln_d(mid as u64) <= cutoff {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lower = if lo < 0 { f64::NEG_INFINITY } else { ln_cdf(lo as u64, n, p0)? };
        ln_add_exp(lower, ln_sf(k, n, p0)?)
    };
    Ok(ln_p_value.min(0.0))
}

/// Two-sided exact binomial p-value.
pub fn exact_binomial_p(k: u64, n: u64, p0: f64) -> Result<f64> {
    Ok(exact_binomial_ln_p(k, n, p0)?.exp())
}
