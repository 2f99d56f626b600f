//! Noisy log-likelihood estimators: synthetic likelihood, ABC and the
//! latent-variable pseudo-marginal estimator, with simulator-call accounting.

use surro::numeric::{mean, rng_stream, variance};
use surro::problems::{builtin, SimulationLedger};

fn main() -> surro::Result<()> {
    let theta = [0.8];
    for name in ["conjugate_sl", "conjugate_abc", "pm_latent"] {
        let p = builtin(name)?;
        let ledger = SimulationLedger::new();
        let mut rng = rng_stream(1, 2);
        let values: Vec<f64> = (0..200)
            .map(|_| Ok(p.evaluate_target(&theta, &ledger, &mut rng)?.scalar()))
            .collect::<surro::Result<_>>()?;
        println!(
            "{name:14} {:?}: mean {:.4}, variance {:.4}, {} simulator calls",
            p.target,
            mean(&values),
            variance(&values),
            ledger.total_calls()
        );
    }
    let exact = builtin("conjugate")?.log_likelihood(&theta)?;
    println!("exact conjugate log-likelihood: {exact:.4}");
    Ok(())
}
