//! Fits the full hierarchical model to a simulated campaign and reports
//! population and per-person estimates on the probability scale.

use coinflip::data::aggregate;
use coinflip::hier::{sample_posterior, summarize_probability_scale, HeterogeneityTransform, ModelSpec, PriorSet};
use coinflip::mcmc::Settings;
use coinflip::simulator::{simulate, PopulationSpec};

fn main() -> coinflip::Result<()> {
    let data = simulate(&PopulationSpec::constant(8, 4, 6, 0.51, 0.08).draw(3)?)?;
    let cells = aggregate(&data);
    let settings = Settings { chains: 4, warmup: 1000, iters: 1000, seed: 11 };
    let fit = sample_posterior(ModelSpec::FULL, PriorSet::estimation(), &cells, &settings)?;

    let d = &fit.draws.diagnostics;
    println!("max R-hat {:.3}, min ESS {:.0}", d.max_rhat, d.min_ess);
    for t in [HeterogeneityTransform::Delta, HeterogeneityTransform::Exact] {
        let r = summarize_probability_scale(&fit.draws, t)?;
        println!(
            "{t:?}: same side {:.4} [{:.4}, {:.4}], sd persons {:.5}, heads {:.4}, sd coins {:.5}",
            r.same_side.mean, r.same_side.ci95[0], r.same_side.ci95[1], r.sd_persons.mean, r.heads.mean, r.sd_coins.mean
        );
    }
    for (name, e) in fit.person_probabilities() {
        println!("{name:>6} {:.4} [{:.4}, {:.4}]", e.mean, e.ci95[0], e.ci95[1]);
    }
    Ok(())
}
