//! MCMC on the plug-in surrogate that runs the simulator whenever the emulator
//! is too uncertain at a proposed or current state, and adds the result to the design.

use surro::active::mh_with_refinement;
use surro::cli::{fit_surrogate, ExperimentConfig};
use surro::numeric::{mean, variance};
use surro::problems::conjugate_posterior_moments;
use surro::samplers::MhConfig;

fn main() -> surro::Result<()> {
    let mut config = ExperimentConfig::builtin("conjugate", 6);
    config.emulator.initial_design = 4;
    let sp = fit_surrogate(&config)?.surrogate;
    let mh = MhConfig::with_steps(6000, 6);

    for threshold in [f64::INFINITY, 1.0, 1e-2] {
        let (chain, hist) = mh_with_refinement(&sp, threshold, Some(40), &mh)?;
        let xs = chain.coordinate(0);
        println!(
            "threshold {threshold:>6}: {} refinements, {} simulator calls, mean {:.4}, var {:.4}",
            hist.refinements(),
            hist.simulator_calls,
            mean(&xs),
            variance(&xs)
        );
    }
    let (m, v) = conjugate_posterior_moments();
    println!("exact:               mean {m:.4}, var {v:.4}");
    Ok(())
}
