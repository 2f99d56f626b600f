//! The built-in inverse problems and their grid reference posteriors.

use surro::grid::Grid;
use surro::problems::{builtin, conjugate_posterior_moments, grid_posterior_oracle, BUILTIN_PROBLEMS};

fn main() -> surro::Result<()> {
    for name in BUILTIN_PROBLEMS {
        let p = builtin(name)?;
        let (lo, hi) = p.prior.bounds();
        print!(
            "{name:14} dim {} outputs {} target {:?}",
            p.dim(),
            p.output_dim(),
            p.target
        );
        if p.dim() <= 2 && !p.target.is_noisy() {
            let grid = Grid::uniform(lo, hi, 512)?;
            let density = grid_posterior_oracle(&p, &grid)?;
            let (m, v) = grid.moments(&density);
            print!("  posterior mean {:.4} var {:.4}", m[0], v[0]);
        }
        println!();
    }
    let (m, v) = conjugate_posterior_moments();
    println!("\nconjugate closed form: mean {m:.4} var {v:.4}");

    let ode = builtin("ode_decay")?;
    let g = ode.forward_model(&[0.5])?;
    println!("ode_decay forward model at 0.5: {:?}", g.as_slice());
    Ok(())
}
