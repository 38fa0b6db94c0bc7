//! Fits the learning model to a campaign whose same-side bias decays with
//! practice and prints the posterior curve.

use coinflip::learning::{fit_learning, learning_curve, make_batches_from, LearningPriors};
use coinflip::mcmc::Settings;
use coinflip::simulator::{simulate, PopulationSpec};

fn main() -> coinflip::Result<()> {
    let mut pop = PopulationSpec::constant(12, 4, 50, 0.5014, 0.01);
    pop.lambda_mu = 0.525;
    pop.rho_mu = -1.6;
    pop.t_origin = 1.0;
    let data = simulate(&pop.draw(100)?)?;
    let batches = make_batches_from(&data, 100, 1.0)?;
    let fit = fit_learning(&batches, LearningPriors::default(), &Settings { chains: 4, warmup: 1000, iters: 1000, seed: 2 })?;

    let s = &fit.summary;
    println!("{} batches, max R-hat {:.3}", s.batches, s.max_rhat);
    println!("baseline {:.4} [{:.4}, {:.4}]", s.baseline.mean, s.baseline.ci95[0], s.baseline.ci95[1]);
    println!("toss order {:.4}, initial {:.4}, rho {:.3}", s.toss_order.mean, s.initial.mean, s.rho.mean);
    println!("truth: {:?}", pop.truth());

    let grid: Vec<f64> = vec![1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
    for p in learning_curve(&fit.draws, &grid)? {
        println!("t = {:>4}: {:.4} [{:.4}, {:.4}]", p.t, p.mean, p.ci_low, p.ci_high);
    }
    Ok(())
}
