//! Stochastic simulators and noisy log-likelihood estimators (synthetic
//! likelihood, ABC, pseudo-marginal) with an append-only simulation ledger.

use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{cholesky_lower, log_mvn_pdf, log_sum_exp, SimRng};

/// Draws one replicate `y ~ p(y | θ)`.
pub type SimulatorFn = Arc<dyn Fn(&[f64], &mut SimRng) -> Result<DVector<f64>> + Send + Sync>;

/// Summary statistic map `S(y)`.
pub type SummaryFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Latent-variable model for pseudo-marginal likelihood estimation:
/// `z ~ p(z | θ)` and `log p(y_o | θ, z)`.
#[derive(Clone)]
pub struct LatentModel {
    pub sample_latent: Arc<dyn Fn(&[f64], &mut SimRng) -> Vec<f64> + Send + Sync>,
    pub log_conditional: Arc<dyn Fn(&DVector<f64>, &[f64], &[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for LatentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("LatentModel")
    }
}

/// One evaluation of the simulator observation process at `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObservation {
    pub theta: Vec<f64>,
    /// Scalar for log-density targets, `P` values for forward-model targets.
    pub value: Vec<f64>,
    pub replicates: usize,
    pub simulator_calls: u64,
    /// Set when the estimate hit a floor or sentinel (zero ABC acceptances,
    /// all-zero pseudo-marginal weights).
    pub flagged: bool,
}

impl SimObservation {
    pub fn scalar(&self) -> f64 {
        self.value[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub theta: Vec<f64>,
    pub simulator_calls: u64,
}

/// Append-only record of simulator usage, safe to share between threads.
#[derive(Debug, Default)]
pub struct SimulationLedger {
    entries: Mutex<Vec<LedgerEntry>>,
}

impl SimulationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, theta: &[f64], calls: u64) {
        self.entries.lock().expect("ledger lock poisoned").push(LedgerEntry {
            theta: theta.to_vec(),
            simulator_calls: calls,
        });
    }

    pub fn total_calls(&self) -> u64 {
        self.entries
            .lock()
            .expect("ledger lock poisoned")
            .iter()
            .map(|e| e.simulator_calls)
            .sum()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("ledger lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().expect("ledger lock poisoned").clone()
    }
}

fn summarize(summary: Option<&SummaryFn>, y: &DVector<f64>) -> DVector<f64> {
    match summary {
        Some(s) => s(y),
        None => y.clone(),
    }
}

/// Synthetic-likelihood estimate `log N(S(y_o) | m_M, C_M)` from `replicates`
/// simulator draws.
pub fn sl_loglik_estimate(
    theta: &[f64],
    simulator: &SimulatorFn,
    summary: Option<&SummaryFn>,
    y_obs: &DVector<f64>,
    replicates: usize,
    ledger: &SimulationLedger,
    rng: &mut SimRng,
) -> Result<SimObservation> {
    let s_obs = summarize(summary, y_obs);
    let s = s_obs.len();
    if replicates < s + 2 {
        return Err(Error::input(format!(
            "synthetic likelihood needs at least {} replicates for a {}-dimensional summary",
            s + 2,
            s
        )));
    }
    let mut stats = DMatrix::zeros(replicates, s);
    for m in 0..replicates {
        let y = simulator(theta, rng)?;
        let sy = summarize(summary, &y);
        if sy.len() != s {
            return Err(Error::Simulator("summary dimension changed between replicates".into()));
        }
        stats.row_mut(m).copy_from(&sy.transpose());
    }
    ledger.record(theta, replicates as u64);
    let mean = DVector::from_fn(s, |j, _| stats.column(j).mean());
    let centered = DMatrix::from_fn(replicates, s, |i, j| stats[(i, j)] - mean[j]);
    let mut cov = centered.transpose() * &centered / (replicates as f64 - 1.0);
    if cholesky_lower(&cov).is_none() {
        let jitter = 1e-8 * cov.trace() / s as f64;
        for j in 0..s {
            cov[(j, j)] += jitter;
        }
        if !(jitter > 0.0) || cholesky_lower(&cov).is_none() {
            return Err(Error::SingularCovariance(
                "synthetic-likelihood sample covariance after jitter".into(),
            ));
        }
    }
    let value = log_mvn_pdf(&s_obs, &mean, &cov)?;
    Ok(SimObservation {
        theta: theta.to_vec(),
        value: vec![value],
        replicates,
        simulator_calls: replicates as u64,
        flagged: false,
    })
}

/// Indicator-kernel ABC estimate `log (1/M) Σ 1(‖S(y_m) − S(y_o)‖ < ε)`.
/// Zero acceptances return the pseudo-count floor `log(1/(M(M+1)))` and flag
/// the observation.
pub fn abc_loglik_estimate(
    theta: &[f64],
    simulator: &SimulatorFn,
    summary: Option<&SummaryFn>,
    y_obs: &DVector<f64>,
    replicates: usize,
    epsilon: f64,
    ledger: &SimulationLedger,
    rng: &mut SimRng,
) -> Result<SimObservation> {
    if replicates == 0 {
        return Err(Error::input("ABC needs at least one replicate"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::input("ABC tolerance must be positive"));
    }
    let s_obs = summarize(summary, y_obs);
    let mut accepted = 0usize;
    for _ in 0..replicates {
        let y = simulator(theta, rng)?;
        if (summarize(summary, &y) - &s_obs).norm() < epsilon {
            accepted += 1;
        }
    }
    ledger.record(theta, replicates as u64);
    let m = replicates as f64;
    let (value, flagged) = if accepted == 0 {
        (-(m * (m + 1.0)).ln(), true)
    } else {
        ((accepted as f64 / m).ln(), false)
    };
    Ok(SimObservation {
        theta: theta.to_vec(),
        value: vec![value],
        replicates,
        simulator_calls: replicates as u64,
        flagged,
    })
}

/// Importance-sampling estimate `log (1/M) Σ p(y_o | θ, z_m)`, `z_m ~ p(z | θ)`,
/// whose exponential is unbiased for the likelihood. All-zero weights give `-∞`
/// and flag the observation.
pub fn pseudo_marginal_loglik_estimate(
    theta: &[f64],
    latent: &LatentModel,
    y_obs: &DVector<f64>,
    replicates: usize,
    ledger: &SimulationLedger,
    rng: &mut SimRng,
) -> Result<SimObservation> {
    if replicates == 0 {
        return Err(Error::input("pseudo-marginal estimation needs at least one replicate"));
    }
    let logs: Vec<f64> = (0..replicates)
        .map(|_| {
            let z = (latent.sample_latent)(theta, rng);
            (latent.log_conditional)(y_obs, theta, &z)
        })
        .collect();
    ledger.record(theta, replicates as u64);
    let value = log_sum_exp(&logs) - (replicates as f64).ln();
    Ok(SimObservation {
        theta: theta.to_vec(),
        value: vec![value],
        replicates,
        simulator_calls: replicates as u64,
        flagged: value == f64::NEG_INFINITY,
    })
}
