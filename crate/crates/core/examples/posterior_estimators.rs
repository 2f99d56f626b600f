//! Compare the pointwise surrogate posterior estimators on the bimodal problem
//! against the grid reference.

use surro::cli::{fit_surrogate, ExperimentConfig};
use surro::estimators::{estimate_pointwise, EstimationMode, PointwiseEstimator};
use surro::grid::Grid;
use surro::problems::grid_posterior_oracle;

fn main() -> surro::Result<()> {
    let mut config = ExperimentConfig::builtin("bimodal", 4);
    config.emulator.initial_design = 10;
    let fitted = fit_surrogate(&config)?;
    let sp = &fitted.surrogate;
    let (lo, hi) = fitted.problem.prior.bounds();
    let grid = Grid::uniform(lo, hi, 512)?;
    let oracle = grid_posterior_oracle(&fitted.problem, &grid)?;

    let kinds = [
        PointwiseEstimator::PlugInMean,
        PointwiseEstimator::Eup,
        PointwiseEstimator::Quantile { alpha: 0.5 },
        PointwiseEstimator::Quantile { alpha: 0.9 },
        PointwiseEstimator::MarginalMode,
        PointwiseEstimator::ExpectedLogLik,
    ];
    let mode = EstimationMode::Grid(grid.clone());
    for kind in kinds {
        let est = estimate_pointwise(sp, kind, &mode)?;
        let (_, density) = est.grid_density().expect("grid estimate");
        println!(
            "{:32} TV to reference {:.4}",
            format!("{kind:?}"),
            grid.total_variation(density, &oracle)
        );
    }
    Ok(())
}
