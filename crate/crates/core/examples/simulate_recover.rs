//! Parameter recovery: simulate replicate campaigns from a known
//! population, refit and tally 95% interval coverage.

use coinflip::data::aggregate;
use coinflip::hier::{sample_posterior, ModelSpec, PriorSet};
use coinflip::mcmc::Settings;
use coinflip::simulator::{coverage, recovery_report, simulate, PopulationSpec};

fn main() -> coinflip::Result<()> {
    let mut pop = PopulationSpec::constant(10, 4, 10, 0.51, 0.06);
    pop.sigma_alpha = 0.02;
    let truth = pop.truth();
    let mut reports = Vec::new();
    for r in 0..5u64 {
        let cells = aggregate(&simulate(&pop.draw(100 + r)?)?);
        let settings = Settings { chains: 2, warmup: 600, iters: 600, seed: r };
        let fit = sample_posterior(ModelSpec::FULL, PriorSet::estimation(), &cells, &settings)?;
        let fitted: Vec<_> = ["beta_mu", "sigma_beta"]
            .iter()
            .map(|n| (n.to_string(), fit.draws.estimate(n).expect("parameter column")))
            .collect();
        reports.push(recovery_report(&truth, &fitted)?);
    }
    for row in coverage(&reports)? {
        println!("{:<12} covered {}/{}", row.parameter, row.covered, row.replicates);
    }
    Ok(())
}
