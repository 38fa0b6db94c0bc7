//! Bayes factor functions under normal-moment priors: the closed-form
//! binomial version and a small hierarchical grid.

use coinflip::data::aggregate;
use coinflip::mcmc::Settings;
use coinflip::published::{reconstruct, DEFAULT_SEED};
use coinflip::sensitivity::{bff_hier, bff_nonhier, default_grid, default_phi_grid, BffKind, FixedModes, HierTarget};
use coinflip::simulator::{simulate, PopulationSpec};

fn main() -> coinflip::Result<()> {
    let cells = aggregate(&reconstruct(DEFAULT_SEED)?);
    let grid = bff_nonhier(cells.n_same(), cells.n_trials(), &default_phi_grid(), BffKind::SameSide)?;
    for p in grid.points.iter().step_by(5) {
        println!("phi {:.4} mode {:.4}  log BF {:>8.3}", p.phi, p.mode_probability, p.log_bf);
    }
    if let Some(m) = &grid.maximum {
        println!("maximum at mode {:.4}: log BF {:.3}", m.mode_probability, m.log_bf);
    }

    let small = aggregate(&simulate(&PopulationSpec::constant(6, 3, 4, 0.52, 0.0).draw(1)?)?);
    let settings = Settings { chains: 2, warmup: 400, iters: 400, seed: 3 };
    let hier = bff_hier(HierTarget::SameSide, &default_grid(0.02, 0.12, 3), &FixedModes::default(), &small, &settings)?;
    for p in &hier.points {
        println!("hier phi {:.3} log BF {:>7.3} mc error {:?}", p.phi, p.log_bf, p.mc_error);
    }
    Ok(())
}
