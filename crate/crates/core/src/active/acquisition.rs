use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{lognormal_moments, PointwiseEstimator, SurrogatePosterior};
use crate::numeric::{log_mvn_pdf, log_sum_exp, SimRng, LN_2PI};

/// Design criteria. All are minimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AcquisitionKind {
    /// Negated pointwise variance of the log-normal surrogate density.
    MaxVarLdens,
    /// Expected conditional integrated variance, log-density target.
    EcuVarLdens,
    /// Expected conditional integrated variance, forward-model target.
    EcuVarFwd,
    /// One-step-ahead emulator variance integrated against EUP weights.
    WeightedIvar,
    /// Draws from `w·π̂ + (1−w)·π_0` instead of optimizing a criterion.
    PosteriorSample { mix_weight: f64 },
    /// Prior draws.
    Random,
}

impl AcquisitionKind {
    pub fn validate(&self, forward_target: bool) -> Result<()> {
        match self {
            AcquisitionKind::PosteriorSample { mix_weight } if !(0.0..=1.0).contains(mix_weight) => {
                Err(Error::input("mix_weight must lie in [0, 1]"))
            }
            AcquisitionKind::MaxVarLdens | AcquisitionKind::EcuVarLdens if forward_target => Err(Error::input(
                "log-density acquisitions need a log-density emulator target",
            )),
            AcquisitionKind::EcuVarFwd if !forward_target => {
                Err(Error::input("EcuVarFwd needs a forward-model emulator target"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the batch is chosen by sampling rather than by optimizing a criterion.
    pub fn is_sampling(&self) -> bool {
        matches!(self, AcquisitionKind::PosteriorSample { .. } | AcquisitionKind::Random)
    }
}

/// Integration measure for integrated criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RhoMeasure {
    /// `J` prior draws with equal weights.
    PriorSamples { count: usize },
    /// Fixed nodes with equal weights.
    Grid { nodes: Vec<Vec<f64>> },
    /// `J` prior draws self-normalized-importance-weighted towards the EUP.
    EupWeighted { count: usize },
}

impl Default for RhoMeasure {
    fn default() -> Self {
        RhoMeasure::PriorSamples { count: 64 }
    }
}

/// A materialized measure: points, nonnegative weights summing to one, and log-prior values.
#[derive(Debug, Clone)]
pub struct RhoPoints {
    pub points: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub log_prior: Vec<f64>,
    /// Set when one node carries more than 99% of the mass.
    pub degenerate: bool,
}

impl RhoPoints {
    pub fn uniform(points: DMatrix<f64>, sp: &SurrogatePosterior) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::input("the integration measure needs at least one node"));
        }
        let log_prior = rows(&points).iter().map(|x| sp.problem().log_prior(x)).collect();
        Ok(Self {
            points,
            weights: vec![1.0 / n as f64; n],
            log_prior,
            degenerate: false,
        })
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

impl RhoMeasure {
    pub fn materialize(&self, sp: &SurrogatePosterior, rng: &mut SimRng) -> Result<RhoPoints> {
        let prior = &sp.problem().prior;
        let from_rows = |r: &[Vec<f64>]| DMatrix::from_fn(r.len(), prior.dim(), |i, j| r[i][j]);
        match self {
            RhoMeasure::PriorSamples { count } => {
                if *count == 0 {
                    return Err(Error::input("rho needs at least one sample"));
                }
                RhoPoints::uniform(from_rows(&prior.sample_n(*count, rng)), sp)
            }
            RhoMeasure::Grid { nodes } => {
                if nodes.iter().any(|n| n.len() != prior.dim()) {
                    return Err(Error::input("rho grid nodes have the wrong dimension"));
                }
                RhoPoints::uniform(from_rows(nodes), sp)
            }
            RhoMeasure::EupWeighted { count } => {
                if *count == 0 {
                    return Err(Error::input("rho needs at least one sample"));
                }
                let mut out = RhoPoints::uniform(from_rows(&prior.sample_n(*count, rng)), sp)?;
                let log_eup = sp.log_density(PointwiseEstimator::Eup, &out.points)?;
                let logw: Vec<f64> = log_eup.iter().zip(&out.log_prior).map(|(e, p)| e - p).collect();
                let lse = log_sum_exp(&logw);
                if !lse.is_finite() {
                    return Err(Error::DegenerateEstimate("EUP importance weights are all zero".into()));
                }
                out.weights = logw.iter().map(|l| (l - lse).exp()).collect();
                let ess = 1.0 / out.weights.iter().map(|w| w * w).sum::<f64>();
                if ess < *count as f64 / 10.0 {
                    warn!("EUP importance weights have effective sample size {ess:.1} of {count}");
                }
                out.degenerate = out.weights.iter().any(|w| *w > 0.99);
                Ok(out)
            }
        }
    }
}

/// Acquisition value with bookkeeping of nodes dropped for overflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcqValue {
    pub value: f64,
    pub skipped_nodes: usize,
    pub flagged: bool,
}

fn require_single_output(sp: &SurrogatePosterior) -> Result<()> {
    if sp.is_forward() {
        return Err(Error::input("this acquisition needs a log-density emulator"));
    }
    Ok(())
}

/// `−Var[π̃_N(θ)]` summed over the batch points; overflow gives `−∞` with the flag set.
pub fn acq_maxvar_ldens(sp: &SurrogatePosterior, batch: &DMatrix<f64>) -> Result<AcqValue> {
    require_single_output(sp)?;
    let moments = sp.pushforward_moments(batch)?;
    let overflow = moments.iter().any(|m| m.overflow);
    let value = if overflow {
        f64::NEG_INFINITY
    } else {
        -moments.iter().map(|m| m.variance).sum::<f64>()
    };
    Ok(AcqValue {
        value,
        skipped_nodes: 0,
        flagged: overflow,
    })
}

/// `Σ_j w_j Var[π̃_N(θ_j)]`, the integrated variance before any new data.
pub fn current_integrated_variance(sp: &SurrogatePosterior, rho: &RhoPoints) -> Result<f64> {
    let moments = sp.pushforward_moments(&rho.points)?;
    Ok(moments
        .iter()
        .zip(&rho.weights)
        .filter(|(m, _)| m.variance.is_finite())
        .map(|(m, w)| w * m.variance)
        .sum())
}

/// Current and one-step-ahead variances `(s²_N, s²_{N+B})`, one column per output.
fn variances(
    sp: &SurrogatePosterior,
    batch: &DMatrix<f64>,
    queries: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let pred = sp.predict(queries)?;
    let mut after = pred.var.clone();
    for (k, gp) in sp.emulators().iter().enumerate() {
        let red = gp.variance_reduction(batch, queries)?;
        for i in 0..queries.nrows() {
            after[(i, k)] = (pred.var[(i, k)] - sp.variance_scale() * red[i]).max(0.0);
        }
    }
    Ok((pred.mean, pred.var, after))
}

/// Log of one node's expected conditional log-normal variance:
/// `2 log π_0 + 2m + log(e^{s²_{N+B}} − 1) + s²_{N+B} + log τ`, `τ = e^{2(s²_N − s²_{N+B})}`.
pub(crate) fn log_ecu_ldens_node(log_prior: f64, m: f64, s2n: f64, s2nb: f64, corrupt_tau: bool) -> f64 {
    if s2nb <= 0.0 || log_prior == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let log_tau = if corrupt_tau { 0.0 } else { 2.0 * (s2n - s2nb) };
    2.0 * log_prior + 2.0 * m + s2nb.exp_m1().ln() + s2nb + log_tau
}

pub(crate) fn ecu_var_ldens_impl(
    sp: &SurrogatePosterior,
    batch: &DMatrix<f64>,
    rho: &RhoPoints,
    corrupt_tau: bool,
) -> Result<AcqValue> {
    require_single_output(sp)?;
    let (mean, before, after) = variances(sp, batch, &rho.points)?;
    let mut value = 0.0;
    let mut skipped = 0;
    for j in 0..rho.points.nrows() {
        let lv = log_ecu_ldens_node(
            rho.log_prior[j],
            mean[(j, 0)],
            before[(j, 0)],
            after[(j, 0)],
            corrupt_tau,
        );
        let v = lv.exp();
        if v.is_finite() {
            value += rho.weights[j] * v;
        } else {
            skipped += 1;
        }
    }
    Ok(AcqValue {
        value,
        skipped_nodes: skipped,
        flagged: skipped > 0,
    })
}

/// Expected conditional integrated variance of the log-normal surrogate density
/// after observing the batch, in closed form.
pub fn acq_ecu_var_ldens(sp: &SurrogatePosterior, batch: &DMatrix<f64>, rho: &RhoPoints) -> Result<AcqValue> {
    ecu_var_ldens_impl(sp, batch, rho, false)
}

/// `log [N(y | m, A) / (2^{P/2} det(2πB)^{1/2})]` for diagonal-plus-Σ covariances.
fn log_scaled_density(y: &DVector<f64>, m: &DVector<f64>, a: &DMatrix<f64>, log_det_b: f64) -> Result<f64> {
    let p = y.len() as f64;
    Ok(log_mvn_pdf(y, m, a)? - 0.5 * p * std::f64::consts::LN_2 - 0.5 * (p * LN_2PI + log_det_b))
}

/// Expected conditional integrated variance for a forward-model emulator with
/// independent outputs and Gaussian noise.
pub fn acq_ecu_var_fwd(sp: &SurrogatePosterior, batch: &DMatrix<f64>, rho: &RhoPoints) -> Result<AcqValue> {
    if !sp.is_forward() {
        return Err(Error::input("EcuVarFwd needs a forward-model emulator"));
    }
    let (mean, before, after) = variances(sp, batch, &rho.points)?;
    let noise = &sp.problem().noise;
    let sigma = noise.cov();
    let y = &sp.problem().observation;
    let mut value = 0.0;
    for j in 0..rho.points.nrows() {
        let lp = rho.log_prior[j];
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let m = mean.row(j).transpose();
        let sn = DMatrix::from_diagonal(&before.row(j).transpose());
        let snb = DMatrix::from_diagonal(&after.row(j).transpose());
        let sigma_n = sigma + &sn;
        let sigma_nb = sigma + &snb;
        let first_cov = &sigma_n - sigma * 0.5;
        let second_cov = &sigma_n - &sigma_nb * 0.5;
        let first = log_scaled_density(y, &m, &first_cov, noise.log_det())
            .map_err(|_| Error::SingularCovariance("Σ_N − Σ/2 is not positive definite".into()))?;
        let second = log_scaled_density(y, &m, &second_cov, crate::numeric::log_det_spd(&sigma_nb)?)
            .map_err(|_| Error::SingularCovariance("Σ_N − Σ_{N+B}/2 is not positive definite".into()))?;
        let term = if second >= first {
            0.0
        } else {
            (2.0 * lp + first).exp() * (-(second - first).exp_m1())
        };
        value += rho.weights[j] * term;
    }
    Ok(AcqValue {
        value,
        skipped_nodes: 0,
        flagged: false,
    })
}

/// `Σ_j w_j s²_{N+B}(θ_j; batch)`, summed over outputs.
pub fn acq_weighted_ivar(sp: &SurrogatePosterior, batch: &DMatrix<f64>, rho: &RhoPoints) -> Result<AcqValue> {
    let (_, _, after) = variances(sp, batch, &rho.points)?;
    let value = (0..rho.points.nrows())
        .map(|j| rho.weights[j] * after.row(j).sum())
        .sum();
    Ok(AcqValue {
        value,
        skipped_nodes: 0,
        flagged: rho.degenerate,
    })
}

/// Dispatches on the criterion. Sampling criteria have no value and are rejected.
pub fn evaluate_acquisition(
    kind: AcquisitionKind,
    sp: &SurrogatePosterior,
    batch: &DMatrix<f64>,
    rho: &RhoPoints,
) -> Result<AcqValue> {
    match kind {
        AcquisitionKind::MaxVarLdens => acq_maxvar_ldens(sp, batch),
        AcquisitionKind::EcuVarLdens => acq_ecu_var_ldens(sp, batch, rho),
        AcquisitionKind::EcuVarFwd => acq_ecu_var_fwd(sp, batch, rho),
        AcquisitionKind::WeightedIvar => acq_weighted_ivar(sp, batch, rho),
        AcquisitionKind::PosteriorSample { .. } | AcquisitionKind::Random => {
            Err(Error::input("sampling strategies have no acquisition value"))
        }
    }
}

/// Variance of the log-normal surrogate density, used by tests and the verify battery.
pub fn lognormal_variance(log_prior: f64, m: f64, s2: f64) -> f64 {
    lognormal_moments(log_prior, m, s2).variance
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpEmulator, Kernel, MeanFunction};
    use crate::numeric::rng_stream;
    use crate::problems::{builtin, TargetKind};

    fn ldens_sp() -> SurrogatePosterior {
        let x = DMatrix::from_row_slice(4, 1, &[-2.0, -0.5, 0.7, 2.2]);
        let y = DVector::from_vec(vec![-6.0, -2.0, -0.3, -4.0]);
        let k = Kernel::squared_exponential(vec![0.9], 2.0).unwrap();
        let gp = GpEmulator::fit(x, y, k, MeanFunction::Constant { value: -3.0 }, 0.0).unwrap();
        SurrogatePosterior::new(vec![gp], builtin("bimodal").unwrap()).unwrap()
    }

    fn fwd_sp() -> SurrogatePosterior {
        let x = DMatrix::from_row_slice(3, 1, &[-1.0, 0.3, 1.8]);
        let y = DVector::from_vec(vec![-1.0, 0.3, 1.8]);
        let k = Kernel::squared_exponential(vec![1.0], 1.0).unwrap();
        let gp = GpEmulator::fit(x, y, k, MeanFunction::Zero, 0.0).unwrap();
        let p = builtin("conjugate")
            .unwrap()
            .with_target(TargetKind::ForwardModel)
            .unwrap();
        SurrogatePosterior::new(vec![gp], p).unwrap()
    }

    fn grid_rho(sp: &SurrogatePosterior, lo: f64, hi: f64) -> RhoPoints {
        let pts = DMatrix::from_fn(64, 1, |i, _| lo + (hi - lo) * i as f64 / 63.0);
        RhoPoints::uniform(pts, sp).unwrap()
    }

    #[test]
    fn duplicate_design_point_is_neutral() {
        let sp = ldens_sp();
        let rho = grid_rho(&sp, -3.0, 3.0);
        let dup = DMatrix::from_row_slice(1, 1, &[0.7]);
        let cur = current_integrated_variance(&sp, &rho).unwrap();
        let ecu = acq_ecu_var_ldens(&sp, &dup, &rho).unwrap().value;
        assert!((ecu - cur).abs() <= 1e-8 * cur.max(1e-300), "{ecu} vs {cur}");

        let spf = fwd_sp();
        let rhof = grid_rho(&spf, -3.0, 3.0);
        let dup = DMatrix::from_row_slice(1, 1, &[0.3]);
        let curf = current_integrated_variance(&spf, &rhof).unwrap();
        let ecuf = acq_ecu_var_fwd(&spf, &dup, &rhof).unwrap().value;
        assert!((ecuf - curf).abs() <= 1e-8 * curf, "{ecuf} vs {curf}");
    }

    #[test]
    fn ecu_never_exceeds_current_risk() {
        let sp = ldens_sp();
        let rho = grid_rho(&sp, -3.0, 3.0);
        let cur = current_integrated_variance(&sp, &rho).unwrap();
        let mut rng = rng_stream(2, 0);
        for _ in 0..100 {
            let b = sp.problem().prior.sample(&mut rng);
            let v = acq_ecu_var_ldens(&sp, &DMatrix::from_row_slice(1, 1, &b), &rho)
                .unwrap()
                .value;
            assert!(v >= 0.0 && v <= cur + 1e-10);
        }
    }

    #[test]
    fn zero_variance_forward_has_nothing_to_learn() {
        let sp = fwd_sp().with_variance_adjustment(0.0, 0.0).unwrap();
        let rho = grid_rho(&sp, -3.0, 3.0);
        let v = acq_ecu_var_fwd(&sp, &DMatrix::from_row_slice(1, 1, &[2.5]), &rho).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn maxvar_zero_at_design_and_matches_moments() {
        let sp = ldens_sp();
        let v = acq_maxvar_ldens(&sp, &DMatrix::from_row_slice(1, 1, &[-0.5])).unwrap();
        assert!(v.value.abs() < 1e-6);
        let pts: Vec<f64> = (0..121).map(|i| -3.0 + 0.05 * i as f64).collect();
        let acq: Vec<f64> = pts
            .iter()
            .map(|t| {
                acq_maxvar_ldens(&sp, &DMatrix::from_row_slice(1, 1, &[*t]))
                    .unwrap()
                    .value
            })
            .collect();
        let var: Vec<f64> = pts
            .iter()
            .map(|t| {
                crate::estimators::pushforward_moments_ldens(&sp, &[*t])
                    .unwrap()
                    .variance
            })
            .collect();
        let argmin = (0..pts.len()).min_by(|&a, &b| acq[a].total_cmp(&acq[b])).unwrap();
        let argmax = (0..pts.len()).max_by(|&a, &b| var[a].total_cmp(&var[b])).unwrap();
        assert_eq!(argmin, argmax);
    }

    #[test]
    fn uniform_weights_give_plain_ivar() {
        let sp = ldens_sp();
        let rho = grid_rho(&sp, -3.0, 3.0);
        let b = DMatrix::from_row_slice(1, 1, &[1.4]);
        let v = acq_weighted_ivar(&sp, &b, &rho).unwrap().value;
        let plain = sp.emulators()[0].conditional_variance(&b, &rho.points).unwrap().mean();
        assert!((v - plain).abs() < 1e-12);
    }

    #[test]
    fn acquisition_target_mismatch_rejected() {
        assert!(AcquisitionKind::EcuVarFwd.validate(false).is_err());
        assert!(AcquisitionKind::EcuVarLdens.validate(true).is_err());
        assert!(AcquisitionKind::PosteriorSample { mix_weight: 1.5 }
            .validate(false)
            .is_err());
    }
}
