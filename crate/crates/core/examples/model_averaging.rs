//! Bridge-sampled marginal likelihoods for all sixteen hierarchical models
//! and the resulting inclusion Bayes factors.

use coinflip::bma::{all_models, compare_models};
use coinflip::data::aggregate;
use coinflip::hier::PriorSet;
use coinflip::mcmc::Settings;
use coinflip::simulator::{simulate, PopulationSpec};

fn main() -> coinflip::Result<()> {
    let data = simulate(&PopulationSpec::constant(8, 4, 8, 0.52, 0.0).draw(5)?)?;
    let settings = Settings { chains: 2, warmup: 600, iters: 600, seed: 21 };
    let cmp = compare_models(&aggregate(&data), &PriorSet::testing(), &settings, &all_models())?;

    for (m, p) in cmp.marginals.iter().zip(&cmp.posterior.posterior) {
        println!("{:<28} log ml {:>12.3}  posterior {:.4}", m.label, m.log_ml, p);
    }
    println!("\ninclusion BFs: {:?}", cmp.inclusion_bfs);
    println!("max relative error {:.4}, max R-hat {:.3}", cmp.max_relative_error(), cmp.max_rhat());
    Ok(())
}
