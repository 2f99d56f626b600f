use std::fs;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::acquisition::{AcquisitionKind, RhoMeasure};
use super::batch::{optimize_batch, sample_batch, BatchStrategy};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_pointwise, EstimationMode, PointwiseEstimator, PosteriorEstimate, SurrogatePosterior,
};
use crate::gp::{optimize_hyperparameters, GpEmulator, GpSnapshot, HyperOptions, MeanFamily, NoiseModel};
use crate::grid::Grid;
use crate::numeric::{rng_stream, SimRng};
use crate::problems::{grid_posterior_oracle, InverseProblem, SimulationLedger};
use crate::samplers::MhConfig;

/// Likelihood exponents `0 = β_0 < β_1 < … < β_T = 1`; round `t` emulates `β_t · log L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperSchedule {
    betas: Vec<f64>,
}

impl TemperSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 || betas[0] != 0.0 || *betas.last().unwrap() != 1.0 {
            return Err(Error::input("a temperature ladder runs from 0 to 1"));
        }
        if betas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::input("temperatures must be strictly increasing"));
        }
        Ok(Self { betas })
    }

    /// `β_t = (t/T)²`.
    pub fn quadratic(rounds: usize) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::input("a tempered campaign needs at least one round"));
        }
        Self::new((0..=rounds).map(|t| (t as f64 / rounds as f64).powi(2)).collect())
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn rounds(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, round: usize) -> f64 {
        self.betas[round.min(self.rounds())]
    }

    /// Rescales stored log-likelihood values to the round's target.
    pub fn rescale(&self, round: usize, loglik: &DVector<f64>) -> DVector<f64> {
        loglik * self.beta(round)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemperingConfig {
    Quadratic,
    Explicit { betas: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveLearningConfig {
    pub initial_design: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub acquisition: AcquisitionKind,
    pub strategy: BatchStrategy,
    pub rho: RhoMeasure,
    /// Candidate-set size when the strategy does not fix one.
    pub n_candidates: usize,
    /// Estimator used for the error metric and for posterior sampling.
    pub estimator: PointwiseEstimator,
    pub mean_family: MeanFamily,
    pub reoptimize: bool,
    pub hyper: HyperOptions,
    pub tempering: Option<TemperingConfig>,
    /// Nodes per axis of the metric grid; defaults to 512 in 1-D and 64 in 2-D.
    pub grid_nodes: Option<usize>,
    pub seed: u64,
}

impl Default for ActiveLearningConfig {
    fn default() -> Self {
        Self {
            initial_design: 4,
            rounds: 5,
            batch_size: 2,
            acquisition: AcquisitionKind::EcuVarLdens,
            strategy: BatchStrategy::default(),
            rho: RhoMeasure::default(),
            n_candidates: 256,
            estimator: PointwiseEstimator::PlugInMean,
            mean_family: MeanFamily::Constant,
            reoptimize: true,
            hyper: HyperOptions::default(),
            tempering: None,
            grid_nodes: None,
            seed: 0,
        }
    }
}

impl ActiveLearningConfig {
    pub fn validate(&self, problem: &InverseProblem) -> Result<()> {
        if self.initial_design < 3 {
            return Err(Error::input("the initial design needs at least three points"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch size must be positive"));
        }
        self.acquisition.validate(problem.target.is_forward_model())?;
        if self.tempering.is_some() && problem.target.is_forward_model() {
            return Err(Error::input("tempering needs a log-likelihood emulator target"));
        }
        let n = self.candidate_count();
        if n < self.batch_size {
            return Err(Error::input("candidate set size must be at least the batch size"));
        }
        Ok(())
    }

    fn candidate_count(&self) -> usize {
        match self.strategy {
            BatchStrategy::ExhaustiveCandidates { candidates } => candidates,
            _ => self.n_candidates,
        }
    }

    pub fn schedule(&self) -> Result<Option<TemperSchedule>> {
        match &self.tempering {
            None => Ok(None),
            Some(TemperingConfig::Quadratic) => TemperSchedule::quadratic(self.rounds).map(Some),
            Some(TemperingConfig::Explicit { betas }) => {
                let s = TemperSchedule::new(betas.clone())?;
                if s.rounds() != self.rounds {
                    return Err(Error::input(
                        "the temperature ladder needs one entry per round plus β_0",
                    ));
                }
                Ok(Some(s))
            }
        }
    }

    fn metric_grid(&self, problem: &InverseProblem) -> Result<Option<Grid>> {
        let d = problem.dim();
        if d > 2 {
            return Ok(None);
        }
        let (lo, hi) = problem.prior.bounds();
        let nodes = self.grid_nodes.unwrap_or(if d == 1 { 512 } else { 64 });
        Grid::uniform(lo, hi, nodes).map(Some)
    }
}

/// One design round: the batch actually simulated and the state after augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub beta: f64,
    pub inputs: Vec<Vec<f64>>,
    /// Raw target values (log-likelihood, or forward outputs).
    pub responses: Vec<Vec<f64>>,
    pub acq_values: Vec<f64>,
    /// Batch points whose simulation failed.
    pub dropped: usize,
    pub tv_to_oracle: Option<f64>,
    pub cumulative_calls: u64,
    /// Emulators the batch was selected with.
    pub acquisition_emulators: Vec<GpSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignHistory {
    pub initial_inputs: Vec<Vec<f64>>,
    pub initial_responses: Vec<Vec<f64>>,
    pub initial_tv: Option<f64>,
    pub initial_calls: u64,
    pub rounds: Vec<RoundRecord>,
    /// Emulators fitted to the full design with the untempered target.
    pub final_emulators: Vec<GpSnapshot>,
}

impl DesignHistory {
    pub fn final_tv(&self) -> Option<f64> {
        self.rounds.last().map_or(self.initial_tv, |r| r.tv_to_oracle)
    }

    pub fn total_calls(&self) -> u64 {
        self.rounds.last().map_or(self.initial_calls, |r| r.cumulative_calls)
    }

    /// Every design input in acquisition order.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        let mut out = self.initial_inputs.clone();
        for r in &self.rounds {
            out.extend(r.inputs.iter().cloned());
        }
        out
    }

    pub fn responses(&self) -> Vec<Vec<f64>> {
        let mut out = self.initial_responses.clone();
        for r in &self.rounds {
            out.extend(r.responses.iter().cloned());
        }
        out
    }

    /// `round,point_idx,theta_*,acq_value,tv_to_oracle,cumulative_calls`.
    pub fn write_rounds_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.initial_inputs.first().map_or(0, Vec::len);
        let cols: Vec<String> = (0..d).map(|i| format!("theta_{i}")).collect();
        writeln!(
            w,
            "round,point_idx,{},acq_value,tv_to_oracle,cumulative_calls",
            cols.join(",")
        )?;
        for r in &self.rounds {
            let tv = r.tv_to_oracle.map(|v| format!("{v:.16e}")).unwrap_or_default();
            for (i, x) in r.inputs.iter().enumerate() {
                let xs: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
                writeln!(
                    w,
                    "{},{i},{},{:.16e},{tv},{}",
                    r.round,
                    xs.join(","),
                    r.acq_values[i],
                    r.cumulative_calls
                )?;
            }
        }
        Ok(())
    }

    /// `rounds.csv`, `design.csv` and one emulator snapshot file per round.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("snapshots"))?;
        self.write_rounds_csv(fs::File::create(dir.join("rounds.csv"))?)?;
        let mut f = fs::File::create(dir.join("design.csv"))?;
        let inputs = self.inputs();
        let responses = self.responses();
        let d = inputs.first().map_or(0, Vec::len);
        let e = responses.first().map_or(0, Vec::len);
        let mut header: Vec<String> = (0..d).map(|i| format!("theta_{i}")).collect();
        header.extend((0..e).map(|i| format!("response_{i}")));
        writeln!(f, "round,{}", header.join(","))?;
        let mut rounds = vec![0usize; self.initial_inputs.len()];
        for r in &self.rounds {
            rounds.extend(std::iter::repeat_n(r.round, r.inputs.len()));
        }
        for ((x, y), t) in inputs.iter().zip(&responses).zip(rounds) {
            let vals: Vec<String> = x.iter().chain(y).map(|v| format!("{v:.16e}")).collect();
            writeln!(f, "{t},{}", vals.join(","))?;
        }
        for r in &self.rounds {
            let path = dir.join("snapshots").join(format!("round_{:03}.json", r.round));
            fs::write(path, serde_json::to_string_pretty(&r.acquisition_emulators)?)?;
        }
        fs::write(
            dir.join("snapshots").join("final.json"),
            serde_json::to_string_pretty(&self.final_emulators)?,
        )?;
        Ok(())
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j])
}

/// Emulators for the current design, one per emulated output. `scale`
/// multiplies every response (the tempering exponent).
fn fit_emulators(
    problem: &InverseProblem,
    inputs: &[Vec<f64>],
    responses: &[Vec<f64>],
    scale: f64,
    config: &ActiveLearningConfig,
    fixed: Option<&[GpEmulator]>,
) -> Result<Vec<GpEmulator>> {
    let x = rows_to_matrix(inputs, problem.dim());
    let outputs = responses.first().map_or(0, Vec::len);
    let noise = if problem.target.is_noisy() {
        NoiseModel::Estimate
    } else {
        NoiseModel::Fixed { variance: 0.0 }
    };
    (0..outputs)
        .map(|k| {
            let y = DVector::from_fn(responses.len(), |i, _| responses[i][k] * scale);
            match fixed {
                Some(prev) => GpEmulator::fit(
                    x.clone(),
                    y,
                    prev[k].kernel().clone(),
                    prev[k].mean_function().clone(),
                    prev[k].noise_variance(),
                ),
                None => optimize_hyperparameters(&x, &y, config.mean_family, noise, config.hyper)?.fit(x.clone(), y),
            }
        })
        .collect()
}

/// Estimate used for the error metric and posterior sampling: on the metric
/// grid in low dimension, by MCMC otherwise.
fn current_estimate(
    sp: &SurrogatePosterior,
    kind: PointwiseEstimator,
    grid: Option<&Grid>,
    seed: u64,
) -> Result<PosteriorEstimate> {
    let mode = match grid {
        Some(g) => EstimationMode::Grid(g.clone()),
        None => EstimationMode::Mcmc {
            config: MhConfig::with_steps(4000, seed),
            n_chains: 1,
        },
    };
    estimate_pointwise(sp, kind, &mode)
}

fn tv_to_oracle(
    sp: &SurrogatePosterior,
    config: &ActiveLearningConfig,
    metric: Option<&(Grid, Vec<f64>)>,
) -> Result<Option<f64>> {
    let Some((grid, oracle)) = metric else {
        return Ok(None);
    };
    let est = current_estimate(sp, config.estimator, Some(grid), config.seed)?;
    let density = est.density_on(grid)?;
    Ok(Some(grid.total_variation(&density, oracle)))
}

/// Evaluates the target at each point, dropping (and logging) failures.
fn simulate(
    problem: &InverseProblem,
    points: &[Vec<f64>],
    ledger: &SimulationLedger,
    rng: &mut SimRng,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, usize) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut dropped = 0;
    for x in points {
        match problem.evaluate_target(x, ledger, rng) {
            Ok(obs) if obs.value.iter().all(|v| v.is_finite()) => {
                xs.push(x.clone());
                ys.push(obs.value);
            }
            Ok(_) => {
                warn!("non-finite target value at {x:?}; point dropped");
                dropped += 1;
            }
            Err(e) => {
                warn!("simulation failed at {x:?}: {e}; point dropped");
                dropped += 1;
            }
        }
    }
    (xs, ys, dropped)
}

const STREAM_INITIAL: u64 = 1;
const STREAM_SIMULATOR: u64 = 2;
const STREAM_ROUND: u64 = 100;

/// Batch-sequential design: initial prior design, then `T` rounds of
/// fit → estimate → select → simulate → augment.
pub fn run_active_learning(problem: &InverseProblem, config: &ActiveLearningConfig) -> Result<DesignHistory> {
    config.validate(problem)?;
    let schedule = config.schedule()?;
    let ledger = SimulationLedger::new();
    let mut sim_rng = rng_stream(config.seed, STREAM_SIMULATOR);
    let metric = match config.metric_grid(problem)? {
        Some(g) => {
            let oracle = grid_posterior_oracle(problem, &g)?;
            Some((g, oracle))
        }
        None => None,
    };

    let mut init_rng = rng_stream(config.seed, STREAM_INITIAL);
    let initial = problem.prior.sample_n(config.initial_design, &mut init_rng);
    let (mut inputs, mut responses, dropped) = simulate(problem, &initial, &ledger, &mut sim_rng);
    if dropped > 0 {
        warn!("{dropped} initial design points dropped");
    }
    if inputs.len() < 3 {
        return Err(Error::input("fewer than three usable initial design points"));
    }
    let base = fit_emulators(problem, &inputs, &responses, 1.0, config, None)?;
    let mut current = base.clone();
    let sp0 = SurrogatePosterior::new(current.clone(), problem.clone())?;
    let initial_tv = tv_to_oracle(&sp0, config, metric.as_ref())?;
    let mut history = DesignHistory {
        initial_inputs: inputs.clone(),
        initial_responses: responses.clone(),
        initial_tv,
        initial_calls: ledger.total_calls(),
        rounds: Vec::with_capacity(config.rounds),
        final_emulators: Vec::new(),
    };
    let fixed = |b: &Vec<GpEmulator>| if config.reoptimize { None } else { Some(b.clone()) };

    for t in 1..=config.rounds {
        let beta = schedule.as_ref().map_or(1.0, |s| s.beta(t));
        let acq_emulators = if beta == 1.0 {
            current.clone()
        } else {
            let raw = DVector::from_iterator(responses.len(), responses.iter().map(|r| r[0]));
            let scaled = schedule.as_ref().expect("tempering enabled").rescale(t, &raw);
            let scaled: Vec<Vec<f64>> = scaled.iter().map(|v| vec![*v]).collect();
            fit_emulators(problem, &inputs, &scaled, 1.0, config, fixed(&base).as_deref())?
        };
        let sp = SurrogatePosterior::new(acq_emulators.clone(), problem.clone())?;
        let mut rng = rng_stream(config.seed, STREAM_ROUND + t as u64);

        let sampling_weight = match (config.acquisition, config.strategy) {
            (AcquisitionKind::Random, _) => Some(0.0),
            (AcquisitionKind::PosteriorSample { mix_weight }, _) => Some(mix_weight),
            (_, BatchStrategy::DirectSampling) => Some(1.0),
            _ => None,
        };
        let (batch, acq_values) = match sampling_weight {
            Some(w) => {
                let est = if w > 0.0 {
                    Some(current_estimate(
                        &sp,
                        config.estimator,
                        metric.as_ref().map(|m| &m.0),
                        config.seed.wrapping_add(t as u64),
                    )?)
                } else {
                    None
                };
                let pts = sample_batch(
                    est.as_ref(),
                    &problem.prior,
                    config.batch_size,
                    w,
                    Some(&acq_emulators[0]),
                    &mut rng,
                )?;
                (pts, vec![f64::NAN; config.batch_size])
            }
            None => {
                let rho = config.rho.materialize(&sp, &mut rng)?;
                let cands = rows_to_matrix(
                    &problem.prior.sample_n(config.candidate_count(), &mut rng),
                    problem.dim(),
                );
                let sel = optimize_batch(
                    config.acquisition,
                    &sp,
                    config.batch_size,
                    config.strategy,
                    &cands,
                    &rho,
                )?;
                (sel.points, sel.acq_values)
            }
        };
        let batch_rows: Vec<Vec<f64>> = (0..batch.nrows())
            .map(|i| batch.row(i).iter().cloned().collect())
            .collect();
        let mut kept_acq = Vec::new();
        let mut new_x = Vec::new();
        let mut new_y = Vec::new();
        let mut dropped = 0;
        for (x, a) in batch_rows.iter().zip(&acq_values) {
            let (xs, ys, d) = simulate(problem, std::slice::from_ref(x), &ledger, &mut sim_rng);
            dropped += d;
            if d == 0 {
                new_x.extend(xs);
                new_y.extend(ys);
                kept_acq.push(*a);
            }
        }
        inputs.extend(new_x.iter().cloned());
        responses.extend(new_y.iter().cloned());
        current = fit_emulators(problem, &inputs, &responses, 1.0, config, fixed(&base).as_deref())?;
        let sp_after = SurrogatePosterior::new(current.clone(), problem.clone())?;
        let tv = tv_to_oracle(&sp_after, config, metric.as_ref())?;
        info!("round {t}: {} points, tv {:?}", new_x.len(), tv);
        history.rounds.push(RoundRecord {
            round: t,
            beta,
            inputs: new_x,
            responses: new_y,
            acq_values: kept_acq,
            dropped,
            tv_to_oracle: tv,
            cumulative_calls: ledger.total_calls(),
            acquisition_emulators: acq_emulators.iter().map(GpEmulator::snapshot).collect(),
        });
    }
    history.final_emulators = current.iter().map(GpEmulator::snapshot).collect();
    Ok(history)
}

/// Error metric of a design of `N₀ + T·B` prior draws. The first `N₀`
/// points coincide with the initial design of [`run_active_learning`] under
/// the same seed.
pub fn prior_design_tv(problem: &InverseProblem, config: &ActiveLearningConfig) -> Result<Option<f64>> {
    config.validate(problem)?;
    let ledger = SimulationLedger::new();
    let mut sim_rng = rng_stream(config.seed, STREAM_SIMULATOR);
    let mut init_rng = rng_stream(config.seed, STREAM_INITIAL);
    let total = config.initial_design + config.rounds * config.batch_size;
    let points = problem.prior.sample_n(total, &mut init_rng);
    let (inputs, responses, _) = simulate(problem, &points, &ledger, &mut sim_rng);
    let emulators = fit_emulators(problem, &inputs, &responses, 1.0, config, None)?;
    let metric = match config.metric_grid(problem)? {
        Some(g) => {
            let oracle = grid_posterior_oracle(problem, &g)?;
            Some((g, oracle))
        }
        None => None,
    };
    tv_to_oracle(
        &SurrogatePosterior::new(emulators, problem.clone())?,
        config,
        metric.as_ref(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::builtin;

    fn small(acq: AcquisitionKind, seed: u64) -> ActiveLearningConfig {
        ActiveLearningConfig {
            initial_design: 4,
            rounds: 2,
            batch_size: 2,
            acquisition: acq,
            n_candidates: 32,
            strategy: BatchStrategy::GreedyKrigingBeliever,
            rho: RhoMeasure::PriorSamples { count: 16 },
            hyper: HyperOptions {
                n_starts: 3,
                max_iterations: 150,
            },
            grid_nodes: Some(128),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn ladder_is_validated() {
        assert!(TemperSchedule::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TemperSchedule::new(vec![0.1, 1.0]).is_err());
        let s = TemperSchedule::quadratic(4).unwrap();
        assert_eq!(s.betas(), &[0.0, 1.0 / 16.0, 0.25, 9.0 / 16.0, 1.0]);
    }

    #[test]
    fn zero_rounds_is_the_initial_design() {
        let p = builtin("conjugate").unwrap();
        let mut c = small(AcquisitionKind::EcuVarLdens, 3);
        c.rounds = 0;
        let h = run_active_learning(&p, &c).unwrap();
        assert!(h.rounds.is_empty());
        assert_eq!(h.inputs().len(), 4);
        let mut csv = Vec::new();
        h.write_rounds_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1);
    }

    #[test]
    fn budget_accounting_and_reproducibility() {
        let p = builtin("bimodal").unwrap();
        let c = small(AcquisitionKind::EcuVarLdens, 5);
        let a = run_active_learning(&p, &c).unwrap();
        let b = run_active_learning(&p, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_calls(), a.inputs().len() as u64);
        assert_eq!(a.inputs().len(), 8);
        let calls: Vec<u64> = a.rounds.iter().map(|r| r.cumulative_calls).collect();
        assert!(calls.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn noisy_targets_charge_replicates() {
        let p = builtin("conjugate_sl").unwrap();
        let mut c = small(AcquisitionKind::MaxVarLdens, 1);
        c.rounds = 1;
        let h = run_active_learning(&p, &c).unwrap();
        assert_eq!(h.total_calls(), 20 * h.inputs().len() as u64);
    }

    #[test]
    fn tempered_final_round_is_untempered() {
        let p = builtin("conjugate").unwrap();
        let mut c = small(AcquisitionKind::EcuVarLdens, 2);
        c.tempering = Some(TemperingConfig::Quadratic);
        let h = run_active_learning(&p, &c).unwrap();
        let last = h.rounds.last().unwrap();
        assert_eq!(last.beta, 1.0);
        let n = last.acquisition_emulators[0].responses.len();
        let raw: Vec<f64> = h.responses()[..n].iter().map(|r| r[0]).collect();
        assert_eq!(last.acquisition_emulators[0].responses, raw);
        let first = &h.rounds[0];
        assert_eq!(first.beta, 0.25);
    }

    #[test]
    fn sampling_acquisitions_run() {
        let p = builtin("conjugate").unwrap();
        for acq in [
            AcquisitionKind::Random,
            AcquisitionKind::PosteriorSample { mix_weight: 0.5 },
        ] {
            let h = run_active_learning(&p, &small(acq, 8)).unwrap();
            assert_eq!(h.inputs().len(), 8);
            assert!(h.rounds.iter().all(|r| r.acq_values.iter().all(|v| v.is_nan())));
        }
    }

    #[test]
    fn forward_target_needs_forward_acquisition() {
        let p = builtin("conjugate")
            .unwrap()
            .with_target(crate::problems::TargetKind::ForwardModel)
            .unwrap();
        assert!(run_active_learning(&p, &small(AcquisitionKind::EcuVarLdens, 0)).is_err());
        let h = run_active_learning(&p, &small(AcquisitionKind::EcuVarFwd, 0)).unwrap();
        assert!(h.final_tv().unwrap() < 0.5);
    }
}
