//! Tempered design: early rounds target a flattened log-likelihood and the
//! schedule ends at the untempered target.

use surro::active::{run_active_learning, ActiveLearningConfig, TemperSchedule, TemperingConfig};
use surro::problems::builtin;

fn main() -> surro::Result<()> {
    let problem = builtin("bimodal")?;
    let rounds = 6;
    println!("quadratic schedule: {:?}", TemperSchedule::quadratic(rounds)?.betas());

    for tempering in [None, Some(TemperingConfig::Quadratic)] {
        let config = ActiveLearningConfig {
            rounds,
            batch_size: 1,
            tempering: tempering.clone(),
            seed: 8,
            ..ActiveLearningConfig::default()
        };
        let h = run_active_learning(&problem, &config)?;
        let betas: Vec<String> = h.rounds.iter().map(|r| format!("{:.2}", r.beta)).collect();
        println!(
            "{:10} betas [{}] final TV {:.4}",
            if tempering.is_some() { "tempered" } else { "untempered" },
            betas.join(", "),
            h.final_tv().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
