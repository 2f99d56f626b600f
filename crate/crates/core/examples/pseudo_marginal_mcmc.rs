//! Pseudo-marginal Metropolis–Hastings with an unbiased likelihood estimator
//! on the latent-variable model; the chain targets the exact posterior.

use surro::numeric::{mean, variance};
use surro::problems::{builtin, pseudo_marginal_loglik_estimate, SimulationLedger};
use surro::samplers::{effective_sample_size, pm_mh, MhConfig};

fn main() -> surro::Result<()> {
    let p = builtin("pm_latent")?;
    let latent = p.latent.clone().expect("latent model");
    let ledger = SimulationLedger::new();
    let config = MhConfig::with_steps(40_000, 3);
    let run = pm_mh(
        |theta, rng| Ok(pseudo_marginal_loglik_estimate(theta, &latent, &p.observation, 16, &ledger, rng)?.scalar()),
        &p.prior,
        &config,
    )?;
    let xs = run.chain.coordinate(0);
    println!(
        "posterior mean {:.4}, variance {:.4}, acceptance {:.2}, ESS {:.0}",
        mean(&xs),
        variance(&xs),
        run.chain.acceptance_rate(),
        effective_sample_size(&xs)
    );
    println!(
        "{} estimator calls, {} simulator calls",
        run.estimator_calls,
        ledger.total_calls()
    );
    // z ~ N(θ, 1), y ~ N(z, 1) with a standard normal prior: posterior N(y/3, 2/3).
    println!("exact: mean {:.4}, variance {:.4}", p.observation[0] / 3.0, 2.0 / 3.0);
    Ok(())
}
