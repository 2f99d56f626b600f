//! Monte Carlo cross-checks of the closed-form results: pushforward moments,
//! expected conditional variances (both targets), the updated-mean law and
//! the expected-posterior mixture. Each closed form is compared with a plain
//! or nested Monte Carlo estimate on randomly generated 1-D instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::active::{acq_ecu_var_fwd, current_integrated_variance, ecu_var_ldens_impl, RhoPoints};
use crate::error::Result;
use crate::estimators::{sample_ep, EpMode, SurrogatePosterior};
use crate::gp::{GpEmulator, Kernel, MeanFunction};
use crate::grid::Grid;
use crate::numeric::{cholesky_lower, rng_stream, SimRng};
use crate::problems::{builtin, InverseProblem, TargetKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub instances: usize,
    /// Monte Carlo draws per check (outer draws for nested checks).
    pub draws: usize,
    /// Allowed deviation in standard errors.
    pub z_tolerance: f64,
    pub seed: u64,
    /// Mutation hook: drops the `τ` factor from the log-density ECU closed form.
    pub corrupt_tau: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            instances: 20,
            draws: 20_000,
            z_tolerance: 3.0,
            seed: 0,
            corrupt_tau: false,
        }
    }
}

/// One closed-form value against its Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub instance: usize,
    pub quantity: String,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub standard_error: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyItem {
    pub name: String,
    pub passed: bool,
    /// Largest `|z|` over comparisons, or the measured distance for non-z items.
    pub max_deviation: f64,
    pub tolerance: f64,
    pub comparisons: Vec<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub items: Vec<VerifyItem>,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Sample variance and a delta-method standard error for it.
fn variance_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let (v, se) = mean_and_se(&sq);
    (v * n / (n - 1.0), se)
}

fn compare(instance: usize, quantity: &str, closed: f64, mc: (f64, f64)) -> Comparison {
    let (monte_carlo, standard_error) = mc;
    let z = if standard_error > 0.0 {
        (closed - monte_carlo) / standard_error
    } else if closed == monte_carlo {
        0.0
    } else {
        f64::INFINITY
    };
    Comparison {
        instance,
        quantity: quantity.to_string(),
        closed_form: closed,
        monte_carlo,
        standard_error,
        z,
    }
}

fn finish(name: &str, comparisons: Vec<Comparison>, tol: f64) -> VerifyItem {
    let max_deviation = comparisons.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    VerifyItem {
        name: name.to_string(),
        passed: max_deviation <= tol,
        max_deviation,
        tolerance: tol,
        comparisons,
    }
}

/// Random-instance shape: constant prior mean and signal-variance range.
#[derive(Clone, Copy)]
struct InstanceShape {
    offset: f64,
    sv_lo: f64,
    sv_hi: f64,
}

/// Forward instances sit around the observation with spread comparable to the
/// noise, so the Monte Carlo side is not a rare-event estimate.
const FWD_SHAPE: InstanceShape = InstanceShape {
    offset: 1.0,
    sv_lo: 0.03,
    sv_hi: 0.15,
};

const LDENS_SHAPE: InstanceShape = InstanceShape {
    offset: -1.0,
    sv_lo: 0.1,
    sv_hi: 0.5,
};

/// A random GP on the prior box of `problem`: 3 to 6 design points and a
/// small nugget on odd instances.
fn random_emulator(problem: &InverseProblem, rng: &mut SimRng, odd: bool, shape: InstanceShape) -> Result<GpEmulator> {
    let offset = shape.offset;
    let (lo, hi) = problem.prior.bounds();
    let (lo, hi) = (lo[0].max(-3.0), hi[0].min(3.0));
    let n = rng.random_range(3..=6);
    let sv: f64 = rng.random_range(shape.sv_lo..shape.sv_hi);
    let ls: f64 = rng.random_range(0.5..1.5);
    // nearly coincident noiseless points give wildly oscillating interpolants
    let mut pts: Vec<f64> = Vec::with_capacity(n);
    while pts.len() < n {
        let p = rng.random_range(lo..hi);
        if pts.iter().all(|q| (p - q).abs() >= 0.5 * ls) {
            pts.push(p);
        }
    }
    let x = DMatrix::from_column_slice(n, 1, &pts);
    let y = DVector::from_fn(n, |_, _| offset + sv.sqrt() * rng.sample::<f64, _>(StandardNormal));
    let noise = if odd { 0.01 * sv } else { 0.0 };
    GpEmulator::fit(
        x,
        y,
        Kernel::squared_exponential(vec![ls], sv)?,
        MeanFunction::Constant { value: offset },
        noise,
    )
}

fn forward_problem() -> Result<InverseProblem> {
    builtin("conjugate")?.with_target(TargetKind::ForwardModel)
}

fn ldens_problem() -> Result<InverseProblem> {
    builtin("bimodal")
}

fn random_point(problem: &InverseProblem, rng: &mut SimRng) -> f64 {
    let (lo, hi) = problem.prior.bounds();
    rng.random_range(lo[0].max(-3.0)..hi[0].min(3.0))
}

fn rho_grid(sp: &SurrogatePosterior) -> Result<RhoPoints> {
    let (lo, hi) = sp.problem().prior.bounds();
    let (lo, hi) = (lo[0].max(-3.0), hi[0].min(3.0));
    RhoPoints::uniform(DMatrix::from_fn(64, 1, |i, _| lo + (hi - lo) * i as f64 / 63.0), sp)
}

/// Draws of the batch responses from the predictive observation process.
fn response_draws(gp: &GpEmulator, batch: &DMatrix<f64>, n: usize, rng: &mut SimRng) -> Result<Vec<DVector<f64>>> {
    let latent = gp.marginal_sampler(batch)?;
    let sd = gp.noise_variance().sqrt();
    Ok((0..n)
        .map(|_| {
            let f = latent.draw(rng);
            f.map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
        })
        .collect())
}

/// Pushforward mean and variance of the surrogate density at a point, forward
/// and log-density targets, against plain Monte Carlo over the emulator marginal.
pub fn check_pushforward_moments(opts: &VerifyOptions) -> Result<VerifyItem> {
    let mut out = Vec::new();
    for (target, problem) in [("fwd", forward_problem()?), ("ldens", ldens_problem()?)] {
        for i in 0..opts.instances {
            let mut rng = rng_stream(opts.seed, 1000 + i as u64);
            let shape = if target == "fwd" { FWD_SHAPE } else { LDENS_SHAPE };
            let gp = random_emulator(&problem, &mut rng, i % 2 == 1, shape)?;
            let sp = SurrogatePosterior::new(vec![gp], problem.clone())?;
            let theta = random_point(&problem, &mut rng);
            let moments = sp.pushforward_moments(&DMatrix::from_element(1, 1, theta))?[0];
            let (m, s2) = sp.emulators()[0].predict_point(&[theta])?;
            let lp = problem.log_prior(&[theta]);
            let values: Vec<f64> = (0..opts.draws)
                .map(|_| {
                    let f = m + s2.sqrt() * rng.sample::<f64, _>(StandardNormal);
                    if target == "fwd" {
                        let g = DVector::from_element(1, f);
                        (lp + problem.noise.log_likelihood(&g, &problem.observation)).exp()
                    } else {
                        (lp + f).exp()
                    }
                })
                .collect();
            out.push(compare(
                i,
                &format!("{target} mean"),
                moments.mean,
                mean_and_se(&values),
            ));
            out.push(compare(
                i,
                &format!("{target} variance"),
                moments.variance,
                variance_and_se(&values),
            ));
        }
    }
    Ok(finish("pushforward_moments", out, opts.z_tolerance))
}

/// Expected conditional integrated variance, forward-model target, against a
/// nested estimate: outer response draws, inner closed-form variance.
pub fn check_ecu_fwd(opts: &VerifyOptions) -> Result<VerifyItem> {
    let problem = forward_problem()?;
    let mut out = Vec::new();
    for i in 0..opts.instances {
        let mut rng = rng_stream(opts.seed, 2000 + i as u64);
        let gp = random_emulator(&problem, &mut rng, i % 2 == 1, FWD_SHAPE)?;
        let sp = SurrogatePosterior::new(vec![gp.clone()], problem.clone())?;
        let rho = rho_grid(&sp)?;
        let batch = DMatrix::from_element(1, 1, random_point(&problem, &mut rng));
        let closed = acq_ecu_var_fwd(&sp, &batch, &rho)?.value;
        let values = response_draws(&gp, &batch, opts.draws, &mut rng)?
            .into_iter()
            .map(|y| {
                let next = SurrogatePosterior::new(vec![gp.update(&batch, &y)?], problem.clone())?;
                current_integrated_variance(&next, &rho)
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(compare(i, "ecu fwd", closed, mean_and_se(&values)));
    }
    Ok(finish("ecu_var_fwd", out, opts.z_tolerance))
}

/// Expected conditional integrated variance, log-density target, against a
/// nested estimate with the exact conditional log-normal variance inside.
pub fn check_ecu_ldens(opts: &VerifyOptions) -> Result<VerifyItem> {
    let problem = ldens_problem()?;
    let mut out = Vec::new();
    for i in 0..opts.instances {
        let mut rng = rng_stream(opts.seed, 3000 + i as u64);
        let gp = random_emulator(&problem, &mut rng, i % 2 == 1, LDENS_SHAPE)?;
        let sp = SurrogatePosterior::new(vec![gp.clone()], problem.clone())?;
        let rho = rho_grid(&sp)?;
        let batch = DMatrix::from_element(1, 1, random_point(&problem, &mut rng));
        let closed = ecu_var_ldens_impl(&sp, &batch, &rho, opts.corrupt_tau)?.value;
        let values = response_draws(&gp, &batch, opts.draws, &mut rng)?
            .into_iter()
            .map(|y| {
                let next = SurrogatePosterior::new(vec![gp.update(&batch, &y)?], problem.clone())?;
                current_integrated_variance(&next, &rho)
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(compare(i, "ecu ldens", closed, mean_and_se(&values)));
    }
    Ok(finish("ecu_var_ldens", out, opts.z_tolerance))
}

/// Law of the updated mean at a query point after a two-point batch.
pub fn check_updated_mean_law(opts: &VerifyOptions) -> Result<VerifyItem> {
    let problem = ldens_problem()?;
    let mut out = Vec::new();
    for i in 0..opts.instances {
        let mut rng = rng_stream(opts.seed, 4000 + i as u64);
        let gp = random_emulator(
            &problem,
            &mut rng,
            i % 2 == 1,
            InstanceShape {
                offset: 0.0,
                ..LDENS_SHAPE
            },
        )?;
        let batch = DMatrix::from_fn(2, 1, |_, _| random_point(&problem, &mut rng));
        let query = random_point(&problem, &mut rng);
        let (m, v) = gp.updated_mean_distribution(&batch, &[query])?;
        let values = response_draws(&gp, &batch, opts.draws, &mut rng)?
            .into_iter()
            .map(|y| Ok(gp.update(&batch, &y)?.predict_point(&[query])?.0))
            .collect::<Result<Vec<f64>>>()?;
        out.push(compare(i, "updated mean", m, mean_and_se(&values)));
        out.push(compare(i, "updated mean variance", v, variance_and_se(&values)));
    }
    Ok(finish("updated_mean_law", out, opts.z_tolerance))
}

/// Bimodal log-likelihood emulator whose design leaves the region between
/// the two modes unsampled.
pub fn bimodal_hole_fixture() -> Result<SurrogatePosterior> {
    let problem = builtin("bimodal")?;
    let xs = [-3.0, -2.3, -1.8, -1.45, -1.15, 1.15, 1.45, 1.8, 2.3, 3.0];
    let x = DMatrix::from_row_slice(xs.len(), 1, &xs);
    let y = DVector::from_fn(xs.len(), |i, _| problem.log_likelihood(&[xs[i]]).expect("finite"));
    let kernel = Kernel::squared_exponential(vec![0.7], 400.0)?;
    let gp = GpEmulator::fit(x, y, kernel, MeanFunction::Constant { value: -40.0 }, 0.0)?;
    SurrogatePosterior::new(vec![gp], problem)
}

/// Expected-posterior mixture computed independently: `K` joint predictive
/// draws on the grid, each exponentiated and normalized, then averaged.
pub fn ep_mixture_oracle(sp: &SurrogatePosterior, grid: &Grid, trajectories: usize, seed: u64) -> Result<Vec<f64>> {
    let nodes = grid.nodes();
    let gp = &sp.emulators()[0];
    let pred = gp.predict(&nodes, false)?;
    let n = nodes.nrows();
    let mut cov = pred.cov.clone();
    let mut jitter = 1e-10 * gp.kernel().signal_variance();
    let chol = loop {
        if let Some(l) = cholesky_lower(&cov) {
            break l;
        }
        for i in 0..n {
            cov[(i, i)] += jitter;
        }
        jitter *= 10.0;
    };
    let weights = grid.weights();
    let lp: Vec<f64> = (0..n).map(|i| sp.problem().log_prior(&grid.node(i))).collect();
    let mut rng = rng_stream(seed, 0);
    let mut avg = vec![0.0; n];
    for _ in 0..trajectories {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f = &pred.mean + &chol * z;
        let logs: Vec<f64> = (0..n).map(|i| lp[i] + f[i]).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let un: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = un.iter().zip(&weights).map(|(u, w)| u * w).sum();
        for (a, u) in avg.iter_mut().zip(&un) {
            *a += u / z;
        }
    }
    Ok(avg.into_iter().map(|a| a / trajectories as f64).collect())
}

/// Grid-mode EP samples (`K = 512`, `M = 200`) on the bimodal fixture against
/// an independently computed mixture with many more trajectories. Distance is
/// total variation on a 64-cell histogram.
pub fn check_ep_mixture(seed: u64) -> Result<VerifyItem> {
    let sp = bimodal_hole_fixture()?;
    let grid = Grid::uniform(&[-3.0], &[3.0], 512)?;
    let est = sample_ep(&sp, 512, 200, &EpMode::Grid(grid.clone()), seed)?;
    let oracle = ep_mixture_oracle(&sp, &grid, 8192, seed.wrapping_add(1))?;
    let tv = binned_tv(&grid, &oracle, est.samples().unwrap_or_default(), 64);
    Ok(VerifyItem {
        name: "ep_mixture".into(),
        passed: tv <= EP_TV_TOLERANCE,
        max_deviation: tv,
        tolerance: EP_TV_TOLERANCE,
        comparisons: Vec::new(),
    })
}

pub const EP_TV_TOLERANCE: f64 = 0.05;

/// Total variation between a grid density and samples after pooling both
/// into `bins` equal cells over the grid's range (1-D).
pub fn binned_tv(grid: &Grid, density: &[f64], samples: &[Vec<f64>], bins: usize) -> f64 {
    let axis = &grid.axes()[0];
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    let cell = |x: f64| (((x - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
    let weights = grid.weights();
    let mut p = vec![0.0; bins];
    for (i, (d, w)) in density.iter().zip(&weights).enumerate() {
        p[cell(axis[i])] += d * w;
    }
    let total: f64 = p.iter().sum();
    let mut q = vec![0.0; bins];
    for s in samples {
        q[cell(s[0])] += 1.0 / samples.len() as f64;
    }
    0.5 * p.iter().zip(&q).map(|(a, b)| (a / total - b).abs()).sum::<f64>()
}

/// The whole battery.
pub fn run_verification(opts: &VerifyOptions) -> Result<VerifyReport> {
    let items = vec![
        check_pushforward_moments(opts)?,
        check_ecu_fwd(opts)?,
        check_ecu_ldens(opts)?,
        check_updated_mean_law(opts)?,
        check_ep_mixture(opts.seed)?,
    ];
    Ok(VerifyReport {
        passed: items.iter().all(|i| i.passed),
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions {
            instances: 4,
            draws: 4000,
            ..Default::default()
        }
    }

    #[test]
    fn quick_battery_passes() {
        let o = quick();
        for item in [
            check_pushforward_moments(&o).unwrap(),
            check_ecu_fwd(&o).unwrap(),
            check_ecu_ldens(&o).unwrap(),
            check_updated_mean_law(&o).unwrap(),
        ] {
            assert!(item.passed, "{} max |z| {}", item.name, item.max_deviation);
        }
    }

    #[test]
    fn corrupted_tau_is_caught() {
        let o = VerifyOptions {
            corrupt_tau: true,
            ..quick()
        };
        assert!(!check_ecu_ldens(&o).unwrap().passed);
    }
}
