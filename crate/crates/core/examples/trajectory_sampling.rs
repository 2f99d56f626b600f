//! Draw whole emulator trajectories: exact joint draws on a grid and
//! random-feature approximations that can be evaluated anywhere.

use nalgebra::{DMatrix, DVector};
use surro::gp::{optimize_hyperparameters, HyperOptions, MeanFamily, NoiseModel, TrajectoryMode, DEFAULT_FEATURES};
use surro::numeric::{mean, rng_stream, variance};

fn main() -> surro::Result<()> {
    let xs = [-2.0, -0.8, 0.4, 1.5, 2.5];
    let x = DMatrix::from_column_slice(xs.len(), 1, &xs);
    let y = DVector::from_iterator(xs.len(), xs.iter().map(|t: &f64| t.cos()));
    let gp = optimize_hyperparameters(
        &x,
        &y,
        MeanFamily::Constant,
        NoiseModel::Fixed { variance: 0.0 },
        HyperOptions::default(),
    )?
    .fit(x, y)?;

    let probe = 1.0;
    let (m, v) = gp.predict_point(&[probe])?;
    let mut rng = rng_stream(5, 0);
    let n = 2000;

    let grid = DMatrix::from_column_slice(3, 1, &[0.0, probe, 2.0]);
    let mode = TrajectoryMode::Grid { points: grid };
    let exact: Vec<f64> = (0..n)
        .map(|_| Ok(gp.sample_trajectory(&mode, &mut rng)?.grid_values().expect("grid draw")[1]))
        .collect::<surro::Result<_>>()?;

    let features: Vec<f64> = (0..n)
        .map(|_| Ok(gp.feature_trajectory(DEFAULT_FEATURES, &mut rng)?.evaluate(&[probe])))
        .collect::<surro::Result<_>>()?;

    println!("at x = {probe}: predictive mean {m:.4}, variance {v:.3e}");
    println!(
        "  joint grid draws : mean {:.4}, variance {:.3e}",
        mean(&exact),
        variance(&exact)
    );
    println!(
        "  feature draws    : mean {:.4}, variance {:.3e}",
        mean(&features),
        variance(&features)
    );
    Ok(())
}
