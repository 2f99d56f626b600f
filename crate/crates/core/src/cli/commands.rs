use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::config::{DesignLayout, EstimationModeConfig, EstimatorKind, ExperimentConfig};
use crate::active::{
    evaluate_acquisition, prior_design_tv, run_active_learning, AcquisitionKind, ActiveLearningConfig, DesignHistory,
};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_ep_grid, estimate_pointwise, sample_ep, EpMode, EstimateKind, EstimateRepr, EstimationMode,
    PointwiseEstimator, PosteriorEstimate, SurrogatePosterior,
};
use crate::gp::{optimize_hyperparameters, GpEmulator, GpSnapshot, NoiseModel};
use crate::grid::Grid;
use crate::numeric::{rng_stream, std_normal_quantile};
use crate::problems::{grid_posterior_oracle, InverseProblem, SimulationLedger};
use crate::verify::{run_verification, VerifyOptions, VerifyReport};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Emulators fitted to the initial design, with the design itself.
pub struct FittedSurrogate {
    pub problem: InverseProblem,
    pub surrogate: SurrogatePosterior,
    pub inputs: Vec<Vec<f64>>,
    pub responses: Vec<Vec<f64>>,
    pub simulator_calls: u64,
}

fn initial_design(config: &ExperimentConfig, problem: &InverseProblem) -> Result<Vec<Vec<f64>>> {
    let n = config.emulator.initial_design;
    match config.emulator.layout {
        DesignLayout::PriorSamples => Ok(problem.prior.sample_n(n, &mut rng_stream(config.seed, 1))),
        DesignLayout::Grid => {
            let d = problem.dim();
            if d > 2 {
                return Err(Error::config(
                    "emulator.layout",
                    "grid designs support one or two dimensions",
                ));
            }
            let per_axis = if d == 1 { n } else { (n as f64).sqrt().ceil() as usize };
            let (lo, hi) = problem.prior.bounds();
            let g = Grid::uniform(lo, hi, per_axis.max(2))?;
            Ok((0..g.len()).map(|i| g.node(i)).collect())
        }
    }
}

/// Builds the initial design, evaluates the target and fits one emulator per emulated output.
pub fn fit_surrogate(config: &ExperimentConfig) -> Result<FittedSurrogate> {
    let problem = config.build_problem()?;
    let design = initial_design(config, &problem)?;
    let ledger = SimulationLedger::new();
    let mut rng = rng_stream(config.seed, 2);
    let mut inputs = Vec::new();
    let mut responses = Vec::new();
    for x in design {
        match problem.evaluate_target(&x, &ledger, &mut rng) {
            Ok(obs) if obs.value.iter().all(|v| v.is_finite()) => {
                inputs.push(x);
                responses.push(obs.value);
            }
            Ok(_) => warn!("non-finite target at {x:?}; dropped"),
            Err(e) => warn!("simulation failed at {x:?}: {e}; dropped"),
        }
    }
    if inputs.len() < 3 {
        return Err(Error::input("fewer than three usable design points"));
    }
    let x = DMatrix::from_fn(inputs.len(), problem.dim(), |i, j| inputs[i][j]);
    let noise = config.emulator.noise.unwrap_or(if problem.target.is_noisy() {
        NoiseModel::Estimate
    } else {
        NoiseModel::Fixed { variance: 0.0 }
    });
    let emulators = (0..responses[0].len())
        .map(|k| {
            let y = DVector::from_fn(responses.len(), |i, _| responses[i][k]);
            optimize_hyperparameters(&x, &y, config.emulator.mean_family, noise, config.emulator.hyper)?
                .fit(x.clone(), y)
        })
        .collect::<Result<Vec<GpEmulator>>>()?;
    let surrogate = SurrogatePosterior::new(emulators, problem.clone())?
        .with_variance_adjustment(config.emulator.variance_scale, config.emulator.variance_offset)?;
    Ok(FittedSurrogate {
        problem,
        surrogate,
        inputs,
        responses,
        simulator_calls: ledger.total_calls(),
    })
}

fn write_design_csv(path: &Path, inputs: &[Vec<f64>], responses: &[Vec<f64>]) -> Result<()> {
    let mut w = create(path)?;
    let d = inputs.first().map_or(0, Vec::len);
    let e = responses.first().map_or(0, Vec::len);
    let mut cols: Vec<String> = (0..d).map(|i| format!("theta_{i}")).collect();
    cols.extend((0..e).map(|i| format!("response_{i}")));
    writeln!(w, "{}", cols.join(","))?;
    for (x, y) in inputs.iter().zip(responses) {
        let vals: Vec<String> = x.iter().chain(y).map(|v| fmt(*v)).collect();
        writeln!(w, "{}", vals.join(","))?;
    }
    Ok(())
}

/// `emulator.json`, `loo.csv` and `design.csv`.
pub fn cmd_fit(config: &ExperimentConfig, out: &Path) -> Result<FittedSurrogate> {
    fs::create_dir_all(out)?;
    let fitted = fit_surrogate(config)?;
    let snaps: Vec<GpSnapshot> = fitted.surrogate.emulators().iter().map(GpEmulator::snapshot).collect();
    write_json(&out.join("emulator.json"), &snaps)?;
    let mut w = create(&out.join("loo.csv"))?;
    let d = fitted.problem.dim();
    let cols: Vec<String> = (0..d).map(|i| format!("theta_{i}")).collect();
    writeln!(
        w,
        "output,index,{},response,loo_mean,loo_variance,standardized_residual,log_score",
        cols.join(",")
    )?;
    for (k, gp) in fitted.surrogate.emulators().iter().enumerate() {
        for (i, p) in gp.loo_diagnostics()?.iter().enumerate() {
            let x: Vec<String> = fitted.inputs[i].iter().map(|v| fmt(*v)).collect();
            writeln!(
                w,
                "{k},{i},{},{},{},{},{},{}",
                x.join(","),
                fmt(gp.responses()[i]),
                fmt(p.loo_mean),
                fmt(p.loo_variance),
                fmt(p.standardized_residual),
                fmt(p.log_score)
            )?;
        }
    }
    w.flush()?;
    write_design_csv(&out.join("design.csv"), &fitted.inputs, &fitted.responses)?;
    Ok(fitted)
}

fn pointwise(kind: EstimatorKind) -> Option<PointwiseEstimator> {
    match kind {
        EstimatorKind::PlugInMean => Some(PointwiseEstimator::PlugInMean),
        EstimatorKind::Eup => Some(PointwiseEstimator::Eup),
        EstimatorKind::Quantile { alpha } => Some(PointwiseEstimator::Quantile { alpha }),
        EstimatorKind::MarginalMode => Some(PointwiseEstimator::MarginalMode),
        EstimatorKind::ExpectedLogLik => Some(PointwiseEstimator::ExpectedLogLik),
        EstimatorKind::Ep { .. } => None,
    }
}

fn box_grid(problem: &InverseProblem, nodes: usize, key: &str) -> Result<Grid> {
    if problem.dim() > 2 {
        return Err(Error::config(key, "grids support one or two dimensions"));
    }
    let (lo, hi) = problem.prior.bounds();
    Grid::uniform(lo, hi, nodes)
}

fn default_grid(problem: &InverseProblem) -> Result<Option<Grid>> {
    match problem.dim() {
        1 => box_grid(problem, 512, "estimator.mode").map(Some),
        2 => box_grid(problem, 64, "estimator.mode").map(Some),
        _ => Ok(None),
    }
}

/// Runs the configured estimator on a fitted surrogate.
pub fn run_estimator(config: &ExperimentConfig, sp: &SurrogatePosterior) -> Result<PosteriorEstimate> {
    let problem = sp.problem();
    if let Some(kind) = pointwise(config.estimator.kind) {
        let probe = DMatrix::from_row_slice(1, problem.dim(), &problem.prior.sample(&mut rng_stream(config.seed, 0)));
        if let Err(e) = sp.log_density(kind, &probe) {
            return Err(match e {
                Error::Input(m) => Error::config("estimator.kind", m),
                other => other,
            });
        }
        let mode = match config.estimator.mode {
            EstimationModeConfig::Grid { nodes } => EstimationMode::Grid(box_grid(problem, nodes, "estimator.mode")?),
            EstimationModeConfig::Mcmc { chains } => EstimationMode::Mcmc {
                config: config.sampler.clone(),
                n_chains: chains,
            },
        };
        return estimate_pointwise(sp, kind, &mode);
    }
    let EstimatorKind::Ep {
        trajectories,
        draws_per_trajectory,
    } = config.estimator.kind
    else {
        unreachable!("pointwise kinds handled above")
    };
    match config.estimator.mode {
        EstimationModeConfig::Grid { nodes } => {
            let grid = box_grid(problem, nodes, "estimator.mode")?;
            if draws_per_trajectory == 0 {
                estimate_ep_grid(sp, &grid, trajectories, config.seed)
            } else {
                sample_ep(sp, trajectories, draws_per_trajectory, &EpMode::Grid(grid), config.seed)
            }
        }
        EstimationModeConfig::Mcmc { .. } => {
            if draws_per_trajectory == 0 {
                return Err(Error::config(
                    "estimator.kind.draws_per_trajectory",
                    "trajectory MCMC needs at least one draw per trajectory",
                ));
            }
            let mode = EpMode::Features {
                n_features: config.emulator.n_features,
                mh: config.sampler.clone(),
            };
            sample_ep(sp, trajectories, draws_per_trajectory, &mode, config.seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferMetrics {
    pub estimator: EstimateKind,
    pub n_design: usize,
    pub simulator_calls: u64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Trapezoid integral of a grid estimate.
    pub integral: Option<f64>,
    pub tv_to_oracle: Option<f64>,
    pub oracle_mean: Option<Vec<f64>>,
    pub oracle_variance: Option<Vec<f64>>,
}

/// `posterior.csv`, `metrics.json`, plus `pushforward.csv` and `design.csv` in 1-D.
pub fn cmd_infer(config: &ExperimentConfig, out: &Path) -> Result<InferMetrics> {
    fs::create_dir_all(out)?;
    let fitted = fit_surrogate(config)?;
    let sp = &fitted.surrogate;
    let est = run_estimator(config, sp)?;
    est.write_csv(create(&out.join("posterior.csv"))?)?;
    let (mean, variance) = est.moments();
    let integral = est.grid_density().map(|(g, d)| g.integrate(d));
    let oracle_grid = match &est.repr {
        EstimateRepr::Grid { grid, .. } => Some(grid.clone()),
        EstimateRepr::Samples { .. } => default_grid(&fitted.problem)?,
    };
    let (tv, om, ov) = match &oracle_grid {
        Some(g) => {
            let oracle = grid_posterior_oracle(&fitted.problem, g)?;
            let dens = est.density_on(g)?;
            let (om, ov) = g.moments(&oracle);
            (Some(g.total_variation(&dens, &oracle)), Some(om), Some(ov))
        }
        None => (None, None, None),
    };
    let metrics = InferMetrics {
        estimator: est.kind.clone(),
        n_design: fitted.inputs.len(),
        simulator_calls: fitted.simulator_calls,
        mean,
        variance,
        integral,
        tv_to_oracle: tv,
        oracle_mean: om,
        oracle_variance: ov,
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    write_design_csv(&out.join("design.csv"), &fitted.inputs, &fitted.responses)?;
    if fitted.problem.dim() == 1 {
        if let Some(g) = &oracle_grid {
            write_pushforward_csv(&out.join("pushforward.csv"), sp, g)?;
        }
    }
    Ok(metrics)
}

/// Emulator mean, variance and central 95% band per output on the grid nodes.
fn write_pushforward_csv(path: &Path, sp: &SurrogatePosterior, grid: &Grid) -> Result<()> {
    let nodes = grid.nodes();
    let pred = sp.predict(&nodes)?;
    let z = std_normal_quantile(0.975)?;
    let mut w = create(path)?;
    writeln!(w, "theta_0,output,mean,variance,lower,upper")?;
    for k in 0..pred.mean.ncols() {
        for i in 0..nodes.nrows() {
            let (m, v) = (pred.mean[(i, k)], pred.var[(i, k)]);
            let sd = v.max(0.0).sqrt();
            writeln!(
                w,
                "{},{k},{},{},{},{}",
                fmt(nodes[(i, 0)]),
                fmt(m),
                fmt(v),
                fmt(m - z * sd),
                fmt(m + z * sd)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignSummary {
    pub final_tv: Option<f64>,
    pub initial_tv: Option<f64>,
    pub total_calls: u64,
    pub design_points: usize,
    pub rounds: usize,
    pub dropped_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRow {
    pub seed: u64,
    pub tv_active: Option<f64>,
    pub tv_random: Option<f64>,
    pub tv_prior_design: Option<f64>,
}

/// Acquisition values over a 1-D grid for the final emulator.
fn write_acquisition_sweep(
    path: &Path,
    problem: &InverseProblem,
    al: &ActiveLearningConfig,
    h: &DesignHistory,
) -> Result<()> {
    let gps = h
        .final_emulators
        .iter()
        .map(GpEmulator::from_snapshot)
        .collect::<Result<Vec<_>>>()?;
    let sp = SurrogatePosterior::new(gps, problem.clone())?;
    let rho = al.rho.materialize(&sp, &mut rng_stream(al.seed, 99))?;
    let grid = box_grid(problem, 256, "active_learning")?;
    let mut w = create(path)?;
    writeln!(w, "theta_0,acq_value")?;
    for i in 0..grid.len() {
        let x = grid.node(i);
        let v = evaluate_acquisition(al.acquisition, &sp, &DMatrix::from_row_slice(1, 1, &x), &rho)?;
        writeln!(w, "{},{}", fmt(x[0]), fmt(v.value))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the design campaign and writes its directory: `rounds.csv`,
/// `design.csv`, snapshots, `config.json`, `summary.json` and `timing.json`.
pub fn cmd_design(config: &ExperimentConfig, out: &Path) -> Result<(DesignHistory, DesignSummary)> {
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let problem = config.build_problem()?;
    let al = &config.active_learning;
    let history = run_active_learning(&problem, al).map_err(|e| match e {
        Error::Input(m) => Error::config("active_learning", m),
        other => other,
    })?;
    history.write_dir(out)?;
    write_json(&out.join("config.json"), config)?;
    let summary = DesignSummary {
        final_tv: history.final_tv(),
        initial_tv: history.initial_tv,
        total_calls: history.total_calls(),
        design_points: history.inputs().len(),
        rounds: history.rounds.len(),
        dropped_points: history.rounds.iter().map(|r| r.dropped).sum(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    if problem.dim() == 1 && !al.acquisition.is_sampling() {
        write_acquisition_sweep(&out.join("acquisition_sweep.csv"), &problem, al, &history)?;
    }
    if config.paired_seeds > 0 {
        let mut rows = Vec::with_capacity(config.paired_seeds);
        for k in 0..config.paired_seeds as u64 {
            let seed = config.seed.wrapping_add(k);
            let active_cfg = ActiveLearningConfig { seed, ..al.clone() };
            let random_cfg = ActiveLearningConfig {
                seed,
                acquisition: AcquisitionKind::Random,
                ..al.clone()
            };
            rows.push(PairedRow {
                seed,
                tv_active: run_active_learning(&problem, &active_cfg)?.final_tv(),
                tv_random: run_active_learning(&problem, &random_cfg)?.final_tv(),
                tv_prior_design: prior_design_tv(&problem, &active_cfg)?,
            });
            info!("paired seed {seed} done");
        }
        let mut w = create(&out.join("comparison.csv"))?;
        writeln!(w, "seed,tv_active,tv_random,tv_prior_design")?;
        let cell = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.seed,
                cell(r.tv_active),
                cell(r.tv_random),
                cell(r.tv_prior_design)
            )?;
        }
        w.flush()?;
    }
    // wall time kept apart so the other artifacts stay byte-reproducible
    write_json(
        &out.join("timing.json"),
        &serde_json::json!({ "wall_seconds": start.elapsed().as_secs_f64() }),
    )?;
    Ok((history, summary))
}

/// Grid reference posterior: `oracle.csv` and `oracle.json` (moments).
pub fn cmd_oracle(config: &ExperimentConfig, out: &Path) -> Result<PosteriorEstimate> {
    fs::create_dir_all(out)?;
    let problem = config.build_problem()?;
    let grid = match config.estimator.mode {
        EstimationModeConfig::Grid { nodes } => box_grid(&problem, nodes, "estimator.mode")?,
        EstimationModeConfig::Mcmc { .. } => default_grid(&problem)?
            .ok_or_else(|| Error::config("problem", "grid oracles need one or two dimensions"))?,
    };
    let density = grid_posterior_oracle(&problem, &grid)?;
    let (mean, variance) = grid.moments(&density);
    let est = PosteriorEstimate {
        kind: EstimateKind::GridTruth,
        repr: EstimateRepr::Grid { grid, density },
        seed: None,
    };
    est.write_csv(create(&out.join("oracle.csv"))?)?;
    write_json(
        &out.join("oracle.json"),
        &serde_json::json!({ "problem": problem.name, "mean": mean, "variance": variance }),
    )?;
    Ok(est)
}

/// Reads a grid posterior CSV (`theta_0[,theta_1],density`) and returns its trapezoid integral.
pub fn posterior_csv_integral(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let Some(dcol) = header.iter().position(|h| *h == "density") else {
        return Err(Error::input(format!("{}: no `density` column", path.display())));
    };
    let dim = dcol;
    if dim == 0 || dim > 2 {
        return Err(Error::input("grid posterior must have one or two theta columns"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::input(format!("{} line {}: {e}", path.display(), i + 2)))?;
        rows.push(vals);
    }
    let mut axes: Vec<Vec<f64>> = (0..dim)
        .map(|d| {
            let mut a: Vec<f64> = rows.iter().map(|r| r[d]).collect();
            a.sort_by(f64::total_cmp);
            a.dedup();
            a
        })
        .collect();
    if axes.iter().map(Vec::len).product::<usize>() != rows.len() {
        return Err(Error::input("posterior CSV is not a full tensor grid"));
    }
    let grid = Grid::from_axes(std::mem::take(&mut axes))?;
    let density: Vec<f64> = rows.iter().map(|r| r[dcol]).collect();
    Ok(grid.integrate(&density))
}

/// Runs the battery, optionally with a posterior-normalization check, and
/// writes `report.json`.
pub fn cmd_verify(opts: &VerifyOptions, check_posterior: Option<&Path>, out: &Path) -> Result<VerifyReport> {
    fs::create_dir_all(out)?;
    let mut report = run_verification(opts)?;
    if let Some(p) = check_posterior {
        let integral = posterior_csv_integral(p)?;
        let dev = (integral - 1.0).abs();
        report.items.push(crate::verify::VerifyItem {
            name: "posterior_integral".into(),
            passed: dev <= 1e-6,
            max_deviation: dev,
            tolerance: 1e-6,
            comparisons: Vec::new(),
        });
        report.passed = report.items.iter().all(|i| i.passed);
    }
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}
