use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::surrogate::{PointwiseEstimator, SurrogatePosterior};
use crate::error::{Error, Result};
use crate::gp::MarginalSampler;
use crate::grid::Grid;
use crate::numeric::{rng_stream, SimRng};
use crate::samplers::{run_chain, run_chains, MhConfig};

/// Which estimator produced a [`PosteriorEstimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimateKind {
    PlugInMean,
    Eup,
    Ep {
        trajectories: usize,
        draws_per_trajectory: usize,
    },
    Quantile {
        alpha: f64,
    },
    MarginalMode,
    ExpectedLogLik,
    GridTruth,
}

impl From<PointwiseEstimator> for EstimateKind {
    fn from(p: PointwiseEstimator) -> Self {
        match p {
            PointwiseEstimator::PlugInMean => EstimateKind::PlugInMean,
            PointwiseEstimator::Eup => EstimateKind::Eup,
            PointwiseEstimator::Quantile { alpha } => EstimateKind::Quantile { alpha },
            PointwiseEstimator::MarginalMode => EstimateKind::MarginalMode,
            PointwiseEstimator::ExpectedLogLik => EstimateKind::ExpectedLogLik,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimateRepr {
    Grid {
        grid: Grid,
        density: Vec<f64>,
    },
    /// Unweighted draws; `trajectory[i]` is the trajectory (EP) or chain index of draw `i`.
    Samples {
        samples: Vec<Vec<f64>>,
        trajectory: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimate {
    pub kind: EstimateKind,
    pub repr: EstimateRepr,
    pub seed: Option<u64>,
}

/// How a pointwise estimator is turned into a normalized posterior.
#[derive(Debug, Clone)]
pub enum EstimationMode {
    Grid(Grid),
    Mcmc { config: MhConfig, n_chains: usize },
}

/// How EP trajectories are represented.
#[derive(Debug, Clone)]
pub enum EpMode {
    /// Exact joint draws on the grid, per-trajectory grid normalization, and
    /// independent draws from each normalized trajectory density.
    Grid(Grid),
    /// Random-feature trajectories, each sampled by its own random-walk MH chain.
    Features { n_features: usize, mh: MhConfig },
}

/// `exp(v − max v)` divided by its trapezoid integral.
pub fn normalize_on_grid(log_values: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    if log_values.len() != grid.len() {
        return Err(Error::input("log-density values do not match the grid"));
    }
    if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::DegenerateEstimate("log-density has NaN or +inf values".into()));
    }
    let max = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateEstimate("density is zero on every grid node".into()));
    }
    let unnorm: Vec<f64> = log_values.iter().map(|v| (v - max).exp()).collect();
    let z = grid.integrate(&unnorm);
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::DegenerateEstimate(
            "density integrates to zero on the grid".into(),
        ));
    }
    Ok(unnorm.into_iter().map(|v| v / z).collect())
}

impl PosteriorEstimate {
    pub fn samples(&self) -> Option<&[Vec<f64>]> {
        match &self.repr {
            EstimateRepr::Samples { samples, .. } => Some(samples),
            _ => None,
        }
    }

    pub fn grid_density(&self) -> Option<(&Grid, &[f64])> {
        match &self.repr {
            EstimateRepr::Grid { grid, density } => Some((grid, density)),
            _ => None,
        }
    }

    /// Density tabulated on `grid`: the stored density when the grids match,
    /// a cell histogram for sample sets.
    pub fn density_on(&self, grid: &Grid) -> Result<Vec<f64>> {
        match &self.repr {
            EstimateRepr::Grid { grid: g, density } if g == grid => Ok(density.clone()),
            EstimateRepr::Grid { .. } => Err(Error::input("estimate is tabulated on a different grid")),
            EstimateRepr::Samples { samples, .. } => Ok(grid.histogram_density(samples)),
        }
    }

    /// Per-coordinate mean and variance.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.repr {
            EstimateRepr::Grid { grid, density } => grid.moments(density),
            EstimateRepr::Samples { samples, .. } => {
                let d = samples[0].len();
                let n = samples.len() as f64;
                let mean: Vec<f64> = (0..d).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / n).collect();
                let var = (0..d)
                    .map(|k| samples.iter().map(|s| (s[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0))
                    .collect();
                (mean, var)
            }
        }
    }

    /// Cumulative sampler for repeated draws.
    pub fn sampler(&self) -> Result<EstimateSampler<'_>> {
        match &self.repr {
            EstimateRepr::Grid { grid, density } => Ok(EstimateSampler::Grid {
                grid,
                cdf: grid.mass_cdf(density),
            }),
            EstimateRepr::Samples { samples, .. } => {
                if samples.is_empty() {
                    Err(Error::EmptyReservoir)
                } else {
                    Ok(EstimateSampler::Reservoir(samples))
                }
            }
        }
    }

    /// Grid: `theta_0[,theta_1],density`; samples: `draw,trajectory,theta_0[,theta_1]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        match &self.repr {
            EstimateRepr::Grid { grid, density } => {
                let cols: Vec<String> = (0..grid.dim()).map(|d| format!("theta_{d}")).collect();
                writeln!(w, "{},density", cols.join(","))?;
                for (i, p) in density.iter().enumerate() {
                    let node: Vec<String> = grid.node(i).iter().map(|v| format!("{v:.16e}")).collect();
                    writeln!(w, "{},{p:.16e}", node.join(","))?;
                }
            }
            EstimateRepr::Samples { samples, trajectory } => {
                let d = samples.first().map(Vec::len).unwrap_or(0);
                let cols: Vec<String> = (0..d).map(|d| format!("theta_{d}")).collect();
                writeln!(w, "draw,trajectory,{}", cols.join(","))?;
                for (i, s) in samples.iter().enumerate() {
                    let vals: Vec<String> = s.iter().map(|v| format!("{v:.16e}")).collect();
                    writeln!(w, "{i},{},{}", trajectory[i], vals.join(","))?;
                }
            }
        }
        Ok(())
    }
}

pub enum EstimateSampler<'a> {
    Grid { grid: &'a Grid, cdf: Vec<f64> },
    Reservoir(&'a [Vec<f64>]),
}

impl EstimateSampler<'_> {
    pub fn draw(&self, rng: &mut SimRng) -> Vec<f64> {
        use rand::Rng;
        match self {
            EstimateSampler::Grid { grid, cdf } => grid.sample_with_cdf(cdf, rng),
            EstimateSampler::Reservoir(s) => s[rng.random_range(0..s.len())].clone(),
        }
    }
}

/// Normalized posterior from a pointwise estimator, on a grid or by MCMC.
pub fn estimate_pointwise(
    sp: &SurrogatePosterior,
    kind: PointwiseEstimator,
    mode: &EstimationMode,
) -> Result<PosteriorEstimate> {
    match mode {
        EstimationMode::Grid(grid) => {
            if grid.dim() != sp.dim() {
                return Err(Error::input("grid dimension differs from the problem"));
            }
            let logs = sp.log_density(kind, &grid.nodes())?;
            Ok(PosteriorEstimate {
                kind: kind.into(),
                repr: EstimateRepr::Grid {
                    grid: grid.clone(),
                    density: normalize_on_grid(&logs, grid)?,
                },
                seed: None,
            })
        }
        EstimationMode::Mcmc { config, n_chains } => {
            // validate the estimator/target combination once up front
            sp.log_density(
                kind,
                &DMatrix::from_row_slice(1, sp.dim(), &sp.problem().prior.sample(&mut rng_stream(0, 0))),
            )?;
            let f = |x: &[f64]| {
                sp.log_density(kind, &DMatrix::from_row_slice(1, x.len(), x))
                    .map(|v| v[0])
                    .unwrap_or(f64::NEG_INFINITY)
            };
            let chains = run_chains(&f, &sp.problem().prior, config, (*n_chains).max(1))?;
            let mut samples = Vec::new();
            let mut trajectory = Vec::new();
            for (c, chain) in chains.iter().enumerate() {
                samples.extend_from_slice(chain.retained());
                trajectory.extend(std::iter::repeat_n(c, chain.retained().len()));
            }
            Ok(PosteriorEstimate {
                kind: kind.into(),
                repr: EstimateRepr::Samples { samples, trajectory },
                seed: Some(config.seed),
            })
        }
    }
}

pub fn estimate_plug_in(sp: &SurrogatePosterior, mode: &EstimationMode) -> Result<PosteriorEstimate> {
    estimate_pointwise(sp, PointwiseEstimator::PlugInMean, mode)
}

pub fn estimate_eup(sp: &SurrogatePosterior, mode: &EstimationMode) -> Result<PosteriorEstimate> {
    estimate_pointwise(sp, PointwiseEstimator::Eup, mode)
}

pub fn estimate_quantile(sp: &SurrogatePosterior, alpha: f64, mode: &EstimationMode) -> Result<PosteriorEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::input(format!("quantile level {alpha} outside (0, 1)")));
    }
    estimate_pointwise(sp, PointwiseEstimator::Quantile { alpha }, mode)
}

pub fn estimate_mode(sp: &SurrogatePosterior, mode: &EstimationMode) -> Result<PosteriorEstimate> {
    estimate_pointwise(sp, PointwiseEstimator::MarginalMode, mode)
}

/// Joint grid samplers, one per emulator output.
fn grid_samplers(sp: &SurrogatePosterior, grid: &Grid) -> Result<(DMatrix<f64>, Vec<MarginalSampler>)> {
    if sp.variance_offset() != 0.0 {
        return Err(Error::input("trajectory sampling does not support a variance offset"));
    }
    let nodes = grid.nodes();
    let samplers = sp
        .emulators()
        .iter()
        .map(|gp| gp.marginal_sampler(&nodes))
        .collect::<Result<Vec<_>>>()?;
    Ok((nodes, samplers))
}

/// Log of `π(θ; f)` up to a constant for one set of output values.
fn trajectory_log_density(sp: &SurrogatePosterior, log_prior: f64, outputs: &[f64]) -> f64 {
    if log_prior == f64::NEG_INFINITY {
        return log_prior;
    }
    if sp.is_forward() {
        let g = nalgebra::DVector::from_row_slice(outputs);
        log_prior + sp.problem().noise.log_likelihood(&g, &sp.problem().observation)
    } else {
        log_prior + outputs[0]
    }
}

/// Grid-normalized density of trajectory `k`; consumes the start of stream `k`.
fn grid_trajectory_density(
    sp: &SurrogatePosterior,
    grid: &Grid,
    log_priors: &[f64],
    samplers: &[MarginalSampler],
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let scale = sp.variance_scale().sqrt();
    let draws: Vec<_> = samplers
        .iter()
        .map(|s| {
            let d = s.draw(rng);
            &s.mean + (d - &s.mean) * scale
        })
        .collect();
    let logs: Vec<f64> = (0..grid.len())
        .map(|i| {
            let outs: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            trajectory_log_density(sp, log_priors[i], &outs)
        })
        .collect();
    normalize_on_grid(&logs, grid)
}

fn grid_log_priors(sp: &SurrogatePosterior, grid: &Grid) -> Vec<f64> {
    (0..grid.len()).map(|i| sp.problem().log_prior(&grid.node(i))).collect()
}

/// Exact grid-mode EP density: the average of `K` grid-normalized trajectory
/// densities. Uses the same per-trajectory streams as [`sample_ep`] in grid
/// mode, so the two see identical trajectories for a given seed.
pub fn ep_grid_density(sp: &SurrogatePosterior, grid: &Grid, trajectories: usize, seed: u64) -> Result<Vec<f64>> {
    if trajectories == 0 {
        return Err(Error::input("EP needs at least one trajectory"));
    }
    let (_, samplers) = grid_samplers(sp, grid)?;
    let lps = grid_log_priors(sp, grid);
    let densities = (0..trajectories)
        .into_par_iter()
        .map(|k| grid_trajectory_density(sp, grid, &lps, &samplers, &mut rng_stream(seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut avg = vec![0.0; grid.len()];
    for d in &densities {
        for (a, v) in avg.iter_mut().zip(d) {
            *a += v;
        }
    }
    Ok(avg.into_iter().map(|a| a / trajectories as f64).collect())
}

/// Grid-mode EP as a tabulated density estimate.
pub fn estimate_ep_grid(
    sp: &SurrogatePosterior,
    grid: &Grid,
    trajectories: usize,
    seed: u64,
) -> Result<PosteriorEstimate> {
    Ok(PosteriorEstimate {
        kind: EstimateKind::Ep {
            trajectories,
            draws_per_trajectory: 0,
        },
        repr: EstimateRepr::Grid {
            grid: grid.clone(),
            density: ep_grid_density(sp, grid, trajectories, seed)?,
        },
        seed: Some(seed),
    })
}

/// Expected-posterior sampling: `K` emulator trajectories, `M` draws from each
/// trajectory's normalized posterior, pooled. Trajectories run in parallel on
/// independent streams and are merged in trajectory order.
pub fn sample_ep(
    sp: &SurrogatePosterior,
    trajectories: usize,
    draws_per_trajectory: usize,
    mode: &EpMode,
    seed: u64,
) -> Result<PosteriorEstimate> {
    if trajectories == 0 || draws_per_trajectory == 0 {
        return Err(Error::input("EP needs K >= 1 trajectories and M >= 1 draws"));
    }
    let per_trajectory: Vec<Vec<Vec<f64>>> = match mode {
        EpMode::Grid(grid) => {
            let (_, samplers) = grid_samplers(sp, grid)?;
            let lps = grid_log_priors(sp, grid);
            (0..trajectories)
                .into_par_iter()
                .map(|k| {
                    let mut rng = rng_stream(seed, k as u64);
                    let density = grid_trajectory_density(sp, grid, &lps, &samplers, &mut rng)?;
                    let cdf = grid.mass_cdf(&density);
                    Ok((0..draws_per_trajectory)
                        .map(|_| grid.sample_with_cdf(&cdf, &mut rng))
                        .collect())
                })
                .collect::<Result<Vec<_>>>()?
        }
        EpMode::Features { n_features, mh } => {
            if sp.variance_offset() != 0.0 {
                return Err(Error::input("trajectory sampling does not support a variance offset"));
            }
            let retained_fraction = 1.0 - mh.burn_in;
            let n_steps = ((draws_per_trajectory as f64) / retained_fraction).ceil() as usize + 1;
            (0..trajectories)
                .into_par_iter()
                .map(|k| {
                    let mut rng = rng_stream(seed, k as u64);
                    let paths = sp
                        .emulators()
                        .iter()
                        .map(|gp| gp.feature_trajectory(*n_features, &mut rng))
                        .collect::<Result<Vec<_>>>()?;
                    let scale = sp.variance_scale().sqrt();
                    let f = |x: &[f64]| {
                        let outs: Vec<f64> = paths
                            .iter()
                            .zip(sp.emulators())
                            .map(|(p, gp)| {
                                let v = p.evaluate(x);
                                if scale == 1.0 {
                                    v
                                } else {
                                    let m = gp.predict_point(x).map(|(m, _)| m).unwrap_or(v);
                                    m + scale * (v - m)
                                }
                            })
                            .collect();
                        trajectory_log_density(sp, sp.problem().log_prior(x), &outs)
                    };
                    let config = MhConfig {
                        n_steps,
                        seed: seed ^ 0x5EED_0000_0000_0001,
                        ..mh.clone()
                    };
                    let chain = run_chain(&f, &sp.problem().prior, &config, k as u64)?;
                    let kept = chain.retained();
                    Ok(kept[kept.len() - draws_per_trajectory..].to_vec())
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut samples = Vec::with_capacity(trajectories * draws_per_trajectory);
    let mut trajectory = Vec::with_capacity(trajectories * draws_per_trajectory);
    for (k, draws) in per_trajectory.into_iter().enumerate() {
        trajectory.extend(std::iter::repeat_n(k, draws.len()));
        samples.extend(draws);
    }
    Ok(PosteriorEstimate {
        kind: EstimateKind::Ep {
            trajectories,
            draws_per_trajectory,
        },
        repr: EstimateRepr::Samples { samples, trajectory },
        seed: Some(seed),
    })
}
