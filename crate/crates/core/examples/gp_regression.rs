//! Fit a GP to a handful of evaluations of a 1-D function, then inspect
//! predictions and leave-one-out diagnostics.

use nalgebra::{DMatrix, DVector};
use surro::gp::{optimize_hyperparameters, HyperOptions, MeanFamily, NoiseModel};

fn main() -> surro::Result<()> {
    let xs: [f64; 7] = [-2.0, -1.2, -0.5, 0.3, 1.1, 1.9, 2.6];
    let x = DMatrix::from_column_slice(xs.len(), 1, &xs);
    let y = DVector::from_iterator(xs.len(), xs.iter().map(|t| (1.5 * t).sin() + 0.2 * t));

    let hyper = optimize_hyperparameters(
        &x,
        &y,
        MeanFamily::Constant,
        NoiseModel::Fixed { variance: 0.0 },
        HyperOptions::default(),
    )?;
    println!(
        "lengthscale {:.3}, signal variance {:.3}, log marginal likelihood {:.3}",
        hyper.kernel.lengthscales()[0],
        hyper.kernel.signal_variance(),
        hyper.log_marginal_likelihood
    );
    let gp = hyper.fit(x, y)?;

    println!("\n    x      truth     mean       sd");
    for t in [-2.5f64, -1.0, 0.0, 0.7, 1.5, 3.0] {
        let (m, v) = gp.predict_point(&[t])?;
        println!("{t:5.2} {:9.4} {m:9.4} {:8.4}", (1.5 * t).sin() + 0.2 * t, v.sqrt());
    }

    println!("\nleave-one-out standardized residuals:");
    for (i, p) in gp.loo_diagnostics()?.iter().enumerate() {
        println!(
            "  x={:5.2}  z={:+.3}  log score {:.3}",
            xs[i], p.standardized_residual, p.log_score
        );
    }

    // Conditioning on one more point without refitting hyperparameters.
    let more = gp.update(&DMatrix::from_row_slice(1, 1, &[0.0]), &DVector::from_element(1, 0.0))?;
    println!(
        "\nafter adding x=0: variance at 0 is {:.2e}",
        more.predict_point(&[0.0])?.1
    );
    Ok(())
}
