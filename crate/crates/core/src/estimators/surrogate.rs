use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpEmulator;
use crate::numeric::{log_mvn_pdf, std_normal_quantile, LN_2PI};
use crate::problems::InverseProblem;

/// Pointwise estimators of the unnormalized posterior density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PointwiseEstimator {
    PlugInMean,
    Eup,
    Quantile {
        alpha: f64,
    },
    MarginalMode,
    /// `exp E[log π̃]`; kept for comparison, not recommended.
    ExpectedLogLik,
}

/// Mean and variance of the random unnormalized density at one point, with logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushforwardMoments {
    pub mean: f64,
    pub variance: f64,
    pub log_mean: f64,
    pub log_variance: f64,
    /// Set when the variance (or mean) overflows `f64`.
    pub overflow: bool,
}

/// An emulator bound to an inverse problem: the random unnormalized density
/// `π̃(θ; f̂_N)`. Forward-model targets carry one independent GP per output;
/// log-density targets carry one GP emulating the log-likelihood.
#[derive(Debug, Clone)]
pub struct SurrogatePosterior {
    emulators: Vec<GpEmulator>,
    problem: InverseProblem,
    variance_scale: f64,
    variance_offset: f64,
}

/// Predictive means and variances, one row per point and one column per output.
#[derive(Debug, Clone)]
pub struct OutputPrediction {
    pub mean: DMatrix<f64>,
    pub var: DMatrix<f64>,
}

impl SurrogatePosterior {
    pub fn new(emulators: Vec<GpEmulator>, problem: InverseProblem) -> Result<Self> {
        let expected = if problem.target.is_forward_model() {
            problem.output_dim()
        } else {
            1
        };
        if emulators.len() != expected {
            return Err(Error::input(format!(
                "target needs {expected} emulator(s), got {}",
                emulators.len()
            )));
        }
        if emulators.iter().any(|g| g.dim() != problem.dim()) {
            return Err(Error::input("emulator input dimension differs from the problem"));
        }
        Ok(Self {
            emulators,
            problem,
            variance_scale: 1.0,
            variance_offset: 0.0,
        })
    }

    /// Replaces every predictive variance `s²` by `scale·s² + offset`. Used to
    /// study the zero-uncertainty and large-uncertainty limits.
    pub fn with_variance_adjustment(mut self, scale: f64, offset: f64) -> Result<Self> {
        if !(scale >= 0.0 && offset >= 0.0 && scale.is_finite() && offset.is_finite()) {
            return Err(Error::input("variance adjustments must be finite and nonnegative"));
        }
        self.variance_scale = scale;
        self.variance_offset = offset;
        Ok(self)
    }

    pub fn emulators(&self) -> &[GpEmulator] {
        &self.emulators
    }

    pub fn problem(&self) -> &InverseProblem {
        &self.problem
    }

    pub fn variance_scale(&self) -> f64 {
        self.variance_scale
    }

    pub fn variance_offset(&self) -> f64 {
        self.variance_offset
    }

    pub fn is_forward(&self) -> bool {
        self.problem.target.is_forward_model()
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn predict(&self, points: &DMatrix<f64>) -> Result<OutputPrediction> {
        let n = points.nrows();
        let e = self.emulators.len();
        let mut mean = DMatrix::zeros(n, e);
        let mut var = DMatrix::zeros(n, e);
        for (j, gp) in self.emulators.iter().enumerate() {
            let (m, v) = gp.predict_marginal(points)?;
            mean.set_column(j, &m);
            var.set_column(j, &v.map(|s| self.variance_scale * s + self.variance_offset));
        }
        Ok(OutputPrediction { mean, var })
    }

    fn log_priors(&self, points: &DMatrix<f64>) -> Vec<f64> {
        (0..points.nrows())
            .map(|i| {
                let x: Vec<f64> = points.row(i).iter().cloned().collect();
                self.problem.log_prior(&x)
            })
            .collect()
    }

    /// Log of the chosen pointwise estimator at each row of `points` (prior included).
    pub fn log_density(&self, kind: PointwiseEstimator, points: &DMatrix<f64>) -> Result<Vec<f64>> {
        let pred = self.predict(points)?;
        let lps = self.log_priors(points);
        let fwd = self.is_forward();
        let q = match kind {
            PointwiseEstimator::Quantile { alpha } => {
                if fwd {
                    return Err(Error::input("the quantile estimator needs a log-density target"));
                }
                if alpha == 0.5 {
                    0.0
                } else {
                    std_normal_quantile(alpha)?
                }
            }
            PointwiseEstimator::MarginalMode if fwd => {
                return Err(Error::input("the marginal-mode estimator needs a log-density target"));
            }
            _ => 0.0,
        };
        (0..points.nrows())
            .map(|i| {
                let lp = lps[i];
                if lp == f64::NEG_INFINITY {
                    return Ok(lp);
                }
                let m = pred.mean.row(i).transpose();
                let s2 = pred.var.row(i).transpose();
                if fwd {
                    Ok(lp + self.fwd_log_term(kind, &m, &s2)?)
                } else {
                    let (m, s2) = (m[0], s2[0]);
                    Ok(lp
                        + match kind {
                            PointwiseEstimator::PlugInMean | PointwiseEstimator::ExpectedLogLik => m,
                            PointwiseEstimator::Eup => m + 0.5 * s2,
                            PointwiseEstimator::Quantile { .. } => m + q * s2.sqrt(),
                            PointwiseEstimator::MarginalMode => m - s2,
                        })
                }
            })
            .collect()
    }

    fn fwd_log_term(&self, kind: PointwiseEstimator, m: &DVector<f64>, s2: &DVector<f64>) -> Result<f64> {
        let noise = &self.problem.noise;
        let y = &self.problem.observation;
        match kind {
            PointwiseEstimator::PlugInMean => Ok(noise.log_likelihood(m, y)),
            PointwiseEstimator::Eup => {
                if s2.iter().all(|v| *v == 0.0) {
                    return Ok(noise.log_likelihood(m, y));
                }
                let cov = noise.cov() + DMatrix::from_diagonal(s2);
                log_mvn_pdf(y, m, &cov)
            }
            PointwiseEstimator::ExpectedLogLik => {
                Ok(noise.log_likelihood(m, y) - 0.5 * noise.trace_inv_times_diag(s2.as_slice()))
            }
            _ => unreachable!("rejected before evaluation"),
        }
    }

    /// Mean and variance of `π̃(θ; f̂_N)` at each row of `points`.
    pub fn pushforward_moments(&self, points: &DMatrix<f64>) -> Result<Vec<PushforwardMoments>> {
        let pred = self.predict(points)?;
        let lps = self.log_priors(points);
        (0..points.nrows())
            .map(|i| {
                let m = pred.mean.row(i).transpose();
                let s2 = pred.var.row(i).transpose();
                if self.is_forward() {
                    self.fwd_moments(lps[i], &m, &s2)
                } else {
                    Ok(lognormal_moments(lps[i], m[0], s2[0]))
                }
            })
            .collect()
    }

    fn fwd_moments(&self, lp: f64, m: &DVector<f64>, s2: &DVector<f64>) -> Result<PushforwardMoments> {
        let noise = &self.problem.noise;
        let y = &self.problem.observation;
        if lp == f64::NEG_INFINITY {
            return Ok(PushforwardMoments {
                mean: 0.0,
                variance: 0.0,
                log_mean: f64::NEG_INFINITY,
                log_variance: f64::NEG_INFINITY,
                overflow: false,
            });
        }
        if s2.iter().all(|v| *v == 0.0) {
            let log_mean = lp + noise.log_likelihood(m, y);
            return Ok(PushforwardMoments {
                mean: log_mean.exp(),
                variance: 0.0,
                log_mean,
                log_variance: f64::NEG_INFINITY,
                overflow: false,
            });
        }
        let c = DMatrix::from_diagonal(s2);
        let sigma = noise.cov();
        let p = y.len() as f64;
        let total = sigma + &c;
        let log_mean = lp + log_mvn_pdf(y, m, &total)?;
        let log_det_total = crate::numeric::log_det_spd(&total)?;
        let half_ln2 = 0.5 * p * std::f64::consts::LN_2;
        let log_second =
            2.0 * lp + log_mvn_pdf(y, m, &(sigma * 0.5 + &c))? - half_ln2 - 0.5 * (p * LN_2PI + noise.log_det());
        let log_mean_sq =
            2.0 * lp + log_mvn_pdf(y, m, &(&total * 0.5))? - half_ln2 - 0.5 * (p * LN_2PI + log_det_total);
        let log_variance = if log_mean_sq >= log_second {
            f64::NEG_INFINITY
        } else {
            log_second + (-(log_mean_sq - log_second).exp_m1()).ln()
        };
        Ok(PushforwardMoments {
            mean: log_mean.exp(),
            variance: log_variance.exp(),
            log_mean,
            log_variance,
            overflow: false,
        })
    }
}

/// Moments of `π_0 · exp(f)` with `f ~ N(m, s²)`; an overflowing variance is
/// reported as `+∞` with the flag set.
pub fn lognormal_moments(log_prior: f64, m: f64, s2: f64) -> PushforwardMoments {
    let log_mean = log_prior + m + 0.5 * s2;
    let log_variance = if s2 == 0.0 || log_prior == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        2.0 * log_prior + s2.exp_m1().ln() + 2.0 * m + s2
    };
    let mean = log_mean.exp();
    let variance = log_variance.exp();
    PushforwardMoments {
        mean,
        variance,
        log_mean,
        log_variance,
        overflow: mean.is_infinite() || variance.is_infinite(),
    }
}

fn single(theta: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, theta.len(), theta)
}

fn require_forward(sp: &SurrogatePosterior, forward: bool) -> Result<()> {
    if sp.is_forward() != forward {
        return Err(Error::input(if forward {
            "this estimator needs a forward-model target"
        } else {
            "this estimator needs a log-density target"
        }));
    }
    Ok(())
}

/// Prop.-style closed-form moments of the forward-model surrogate density at `θ`.
pub fn pushforward_moments_fwd(sp: &SurrogatePosterior, theta: &[f64]) -> Result<PushforwardMoments> {
    require_forward(sp, true)?;
    Ok(sp.pushforward_moments(&single(theta))?[0])
}

/// Log-normal moments of the log-density surrogate at `θ`.
pub fn pushforward_moments_ldens(sp: &SurrogatePosterior, theta: &[f64]) -> Result<PushforwardMoments> {
    require_forward(sp, false)?;
    Ok(sp.pushforward_moments(&single(theta))?[0])
}

pub fn log_plug_in(sp: &SurrogatePosterior, theta: &[f64]) -> Result<f64> {
    Ok(sp.log_density(PointwiseEstimator::PlugInMean, &single(theta))?[0])
}

/// `log π_0(θ) + log N(y_o | m_N(θ), Σ + S_N(θ))`.
pub fn log_eup_fwd(sp: &SurrogatePosterior, theta: &[f64]) -> Result<f64> {
    require_forward(sp, true)?;
    Ok(sp.log_density(PointwiseEstimator::Eup, &single(theta))?[0])
}

/// `log π_0(θ) + m_N(θ) + ½ s²_N(θ)`.
pub fn log_eup_ldens(sp: &SurrogatePosterior, theta: &[f64]) -> Result<f64> {
    require_forward(sp, false)?;
    Ok(sp.log_density(PointwiseEstimator::Eup, &single(theta))?[0])
}

/// `log π_0(θ) + m_N(θ) + q(α) s_N(θ)`.
pub fn log_quantile_ldens(sp: &SurrogatePosterior, theta: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::input(format!("quantile level {alpha} outside (0, 1)")));
    }
    Ok(sp.log_density(PointwiseEstimator::Quantile { alpha }, &single(theta))?[0])
}

/// `log π_0(θ) + m_N(θ) − s²_N(θ)`.
pub fn log_mode_ldens(sp: &SurrogatePosterior, theta: &[f64]) -> Result<f64> {
    Ok(sp.log_density(PointwiseEstimator::MarginalMode, &single(theta))?[0])
}
