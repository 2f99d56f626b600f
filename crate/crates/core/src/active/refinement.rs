use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::SurrogatePosterior;
use crate::gp::{GpEmulator, GpSnapshot};
use crate::numeric::rng_stream;
use crate::problems::SimulationLedger;
use crate::samplers::{run_mh_refreshing, Chain, MhConfig};

/// Relative predictive variance below which an evaluated point is not added to the emulator.
pub const INTERPOLATION_FLOOR: f64 = 1e-8;

/// Target evaluations made during a refined chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementHistory {
    /// Chain step at which each evaluation happened.
    pub steps: Vec<usize>,
    pub inputs: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
    /// Evaluations not added to the emulator (already interpolated, or ill-conditioned).
    pub rejected_updates: usize,
    pub simulator_calls: u64,
    pub final_emulator: GpSnapshot,
}

impl RefinementHistory {
    pub fn refinements(&self) -> usize {
        self.inputs.len()
    }
}

/// RWMH on the plug-in log-density. Whenever a proposal has emulator
/// variance above `threshold` and budget remains, the true target is
/// evaluated there, the emulator is conditioned on it, and both the current
/// and the proposed log-density are recomputed before the accept step.
/// `budget = None` means unlimited.
pub fn mh_with_refinement(
    sp: &SurrogatePosterior,
    threshold: f64,
    budget: Option<usize>,
    config: &MhConfig,
) -> Result<(Chain, RefinementHistory)> {
    if sp.is_forward() {
        return Err(Error::input("refinement needs a log-density emulator"));
    }
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::input("variance threshold must be nonnegative"));
    }
    let problem = sp.problem();
    let prior = &problem.prior;
    let ledger = SimulationLedger::new();
    let mut sim_rng = rng_stream(config.seed, 3);
    let mut gp: GpEmulator = sp.emulators()[0].clone();
    let mut history = RefinementHistory {
        steps: Vec::new(),
        inputs: Vec::new(),
        responses: Vec::new(),
        rejected_updates: 0,
        simulator_calls: 0,
        final_emulator: gp.snapshot(),
    };
    let mut step = 0usize;
    let plug_in = |gp: &GpEmulator, x: &[f64]| -> Result<f64> {
        if !prior.contains(x) {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(problem.log_prior(x) + gp.predict_point(x)?.0)
    };
    let chain = run_mh_refreshing(prior, config, 0, |x, current| {
        let Some(current) = current else {
            return Ok((plug_in(&gp, x)?, None));
        };
        step += 1;
        if !prior.contains(x) {
            return Ok((f64::NEG_INFINITY, None));
        }
        let exhausted = budget.is_some_and(|b| history.inputs.len() >= b);
        if exhausted || threshold.is_infinite() {
            return Ok((plug_in(&gp, x)?, None));
        }
        let s2 = gp.predict_point(x)?.1;
        if s2 <= threshold {
            return Ok((plug_in(&gp, x)?, None));
        }
        let obs = problem.evaluate_target(x, &ledger, &mut sim_rng)?;
        let value = obs.scalar();
        history.steps.push(step - 1);
        history.inputs.push(x.to_vec());
        history.responses.push(value);
        if s2 <= INTERPOLATION_FLOOR * gp.kernel().signal_variance() {
            // already interpolated to working precision; conditioning would only
            // grow the design
            history.rejected_updates += 1;
            return Ok((problem.log_prior(x) + value, None));
        }
        let x_mat = DMatrix::from_row_slice(1, x.len(), x);
        let candidate = match gp.update(&x_mat, &DVector::from_element(1, value)) {
            Ok(next) => {
                gp = next;
                plug_in(&gp, x)?
            }
            Err(Error::DegenerateUpdate(_) | Error::Factorization { .. }) => {
                history.rejected_updates += 1;
                problem.log_prior(x) + value
            }
            Err(e) => return Err(e),
        };
        Ok((candidate, Some(plug_in(&gp, current)?)))
    })?;
    history.simulator_calls = ledger.total_calls();
    history.final_emulator = gp.snapshot();
    Ok((chain, history))
}
