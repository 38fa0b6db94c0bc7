//! Maximum-likelihood random-intercept logistic model for the same-side
//! outcome, fitted by adaptive Gauss-Hermite quadrature.

use coinflip::data::aggregate;
use coinflip::hier::glmm::ml_fit_random_intercept;
use coinflip::numerics::inv_logit;
use coinflip::published::{reconstruct, DEFAULT_SEED};

fn main() -> coinflip::Result<()> {
    let cells = aggregate(&reconstruct(DEFAULT_SEED)?);
    let fit = ml_fit_random_intercept(&cells)?;
    println!("intercept {:.4} (se {:.4}), probability {:.4}", fit.b_mu, fit.se, inv_logit(fit.b_mu));
    println!("z = {:.2}, p = {:.3e}", fit.z, fit.p);
    println!("person sd {:.4}, LR chi2 {:.2} (p = {:.3e})", fit.tau, fit.lr_chi2, fit.lr_p);
    Ok(())
}
