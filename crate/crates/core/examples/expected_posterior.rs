//! The expected posterior: average the normalized posteriors of emulator
//! trajectories. Tabulated exactly on a grid and sampled by trajectory.

use surro::cli::{fit_surrogate, ExperimentConfig};
use surro::estimators::{estimate_ep_grid, sample_ep, EpMode};
use surro::grid::Grid;
use surro::problems::grid_posterior_oracle;

fn main() -> surro::Result<()> {
    let mut config = ExperimentConfig::builtin("bimodal", 2);
    config.emulator.initial_design = 8;
    let fitted = fit_surrogate(&config)?;
    let sp = &fitted.surrogate;
    let (lo, hi) = fitted.problem.prior.bounds();
    let grid = Grid::uniform(lo, hi, 256)?;
    let oracle = grid_posterior_oracle(&fitted.problem, &grid)?;

    let tab = estimate_ep_grid(sp, &grid, 500, 9)?;
    let (_, density) = tab.grid_density().expect("grid estimate");
    println!(
        "tabulated EP (K=500): TV to reference {:.4}",
        grid.total_variation(density, &oracle)
    );

    let draws = sample_ep(sp, 200, 50, &EpMode::Grid(grid.clone()), 9)?;
    let (m, v) = draws.moments();
    let (om, ov) = grid.moments(&oracle);
    println!("sampled EP (K=200, M=50): mean {:.3} var {:.3}", m[0], v[0]);
    println!("reference:                mean {:.3} var {:.3}", om[0], ov[0]);
    Ok(())
}
