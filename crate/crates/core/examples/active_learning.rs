//! A batch-sequential design campaign on the bimodal problem, compared with a
//! design of the same size drawn from the prior.

use surro::active::{prior_design_tv, run_active_learning, AcquisitionKind, ActiveLearningConfig};
use surro::problems::builtin;

fn main() -> surro::Result<()> {
    let problem = builtin("bimodal")?;
    let config = ActiveLearningConfig {
        initial_design: 4,
        rounds: 5,
        batch_size: 2,
        acquisition: AcquisitionKind::EcuVarLdens,
        seed: 21,
        ..ActiveLearningConfig::default()
    };
    let history = run_active_learning(&problem, &config)?;
    println!("initial TV {:.4}", history.initial_tv.unwrap_or(f64::NAN));
    for r in &history.rounds {
        let pts: Vec<String> = r.inputs.iter().map(|p| format!("{:+.3}", p[0])).collect();
        println!(
            "round {}: picked [{}]  TV {:.4}  calls {}",
            r.round,
            pts.join(", "),
            r.tv_to_oracle.unwrap_or(f64::NAN),
            r.cumulative_calls
        );
    }
    let baseline = prior_design_tv(&problem, &config)?.unwrap_or(f64::NAN);
    println!("prior design of {} points: TV {baseline:.4}", history.inputs().len());

    let out = std::env::temp_dir().join("surro_active_learning");
    history.write_dir(&out)?;
    println!("artifacts in {}", out.display());
    Ok(())
}
