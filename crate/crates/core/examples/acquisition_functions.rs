//! Evaluate the design criteria along a 1-D sweep and pick batches with the
//! exhaustive and greedy strategies.

use nalgebra::DMatrix;
use surro::active::{
    current_integrated_variance, evaluate_acquisition, optimize_batch, AcquisitionKind, BatchStrategy, RhoMeasure,
};
use surro::cli::{fit_surrogate, ExperimentConfig};
use surro::gp::points_from_rows;
use surro::numeric::rng_stream;

fn main() -> surro::Result<()> {
    let mut config = ExperimentConfig::builtin("conjugate", 1);
    config.emulator.initial_design = 4;
    let sp = fit_surrogate(&config)?.surrogate;
    let mut rng = rng_stream(1, 50);
    let rho = RhoMeasure::PriorSamples { count: 128 }.materialize(&sp, &mut rng)?;

    let current = current_integrated_variance(&sp, &rho)?;
    println!("current integrated variance {current:.4e}; ECU column shows the expected reduction\n");
    let kinds = [
        AcquisitionKind::MaxVarLdens,
        AcquisitionKind::EcuVarLdens,
        AcquisitionKind::WeightedIvar,
    ];
    println!(
        "    x   {:>14} {:>14} {:>14}",
        "MaxVarLdens", "ECU reduction", "WeightedIvar"
    );
    for i in 0..=12 {
        let x = -1.0 + 0.25 * i as f64;
        let b = DMatrix::from_row_slice(1, 1, &[x]);
        let vals = kinds
            .iter()
            .map(|k| Ok(evaluate_acquisition(*k, &sp, &b, &rho)?.value))
            .collect::<surro::Result<Vec<f64>>>()?;
        println!(
            "{x:6.2} {:14.4e} {:14.4e} {:14.4e}",
            vals[0],
            current - vals[1],
            vals[2]
        );
    }

    let candidates = points_from_rows(&sp.problem().prior.sample_n(256, &mut rng))?;
    for strategy in [
        BatchStrategy::ExhaustiveCandidates { candidates: 256 },
        BatchStrategy::GreedyKrigingBeliever,
        BatchStrategy::GreedyConstantLiar { value: -50.0 },
    ] {
        let sel = optimize_batch(
            AcquisitionKind::EcuVarLdens,
            &sp,
            2,
            strategy,
            &candidates,
            &rho,
        )?;
        let pts: Vec<String> = sel.points.column(0).iter().map(|v| format!("{v:.3}")).collect();
        println!("{strategy:?}: batch [{}]", pts.join(", "));
    }
    Ok(())
}
