use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::likelihood::GaussianNoise;
use super::noisy::{
    abc_loglik_estimate, pseudo_marginal_loglik_estimate, sl_loglik_estimate, LatentModel, SimObservation,
    SimulationLedger, SimulatorFn, SummaryFn,
};
use super::ode::{ode_forward_model, ObservationOperator, OdeSpec};
use super::prior::Prior;
use crate::error::{Error, Result};
use crate::estimators::normalize_on_grid;
use crate::grid::{Grid, MIN_NODES_PER_DIM};
use crate::numeric::{log_normal_pdf, SimRng};

/// Deterministic forward map `θ ↦ G(θ) ∈ ℝ^P`.
pub type ForwardFn = Arc<dyn Fn(&[f64]) -> Result<DVector<f64>> + Send + Sync>;

/// What the emulator is trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    ForwardModel,
    LogLikelihood,
    NoisySl { replicates: usize },
    NoisyAbc { replicates: usize, epsilon: f64 },
    PseudoMarginal { replicates: usize },
}

impl TargetKind {
    pub fn is_forward_model(&self) -> bool {
        matches!(self, TargetKind::ForwardModel)
    }

    pub fn is_noisy(&self) -> bool {
        matches!(
            self,
            TargetKind::NoisySl { .. } | TargetKind::NoisyAbc { .. } | TargetKind::PseudoMarginal { .. }
        )
    }

    /// Simulator calls consumed per target evaluation.
    pub fn calls_per_evaluation(&self) -> u64 {
        match self {
            TargetKind::ForwardModel | TargetKind::LogLikelihood => 1,
            TargetKind::NoisySl { replicates }
            | TargetKind::NoisyAbc { replicates, .. }
            | TargetKind::PseudoMarginal { replicates } => *replicates as u64,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TargetKind::NoisySl { replicates } if *replicates < 2 => {
                Err(Error::input("synthetic likelihood needs at least two replicates"))
            }
            TargetKind::NoisyAbc { replicates, epsilon } if *replicates == 0 || !(*epsilon > 0.0) => {
                Err(Error::input("ABC needs replicates >= 1 and epsilon > 0"))
            }
            TargetKind::PseudoMarginal { replicates } if *replicates == 0 => {
                Err(Error::input("pseudo-marginal estimation needs replicates >= 1"))
            }
            _ => Ok(()),
        }
    }
}

/// A Bayesian inverse problem `y_o = G(θ) + ε`, `ε ~ N(0, Σ)`, `θ ~ π_0`,
/// together with the choice of emulator target.
#[derive(Clone)]
pub struct InverseProblem {
    pub name: String,
    pub prior: Prior,
    pub observation: DVector<f64>,
    pub noise: GaussianNoise,
    pub target: TargetKind,
    pub forward: Option<ForwardFn>,
    /// Stochastic simulator for SL/ABC targets. When absent, `G(θ) + ε` is used.
    pub simulator: Option<SimulatorFn>,
    pub summary: Option<SummaryFn>,
    pub latent: Option<LatentModel>,
}

impl fmt::Debug for InverseProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InverseProblem")
            .field("name", &self.name)
            .field("prior", &self.prior)
            .field("observation", &self.observation)
            .field("target", &self.target)
            .finish_non_exhaustive()
    }
}

impl InverseProblem {
    pub fn new(
        name: impl Into<String>,
        prior: Prior,
        observation: DVector<f64>,
        noise_cov: DMatrix<f64>,
        target: TargetKind,
        forward: Option<ForwardFn>,
    ) -> Result<Self> {
        prior.validate()?;
        target.validate()?;
        if observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("observation must be finite"));
        }
        if noise_cov.nrows() != observation.len() {
            return Err(Error::input("noise covariance and observation dimensions differ"));
        }
        let noise = GaussianNoise::new(noise_cov)?;
        Ok(Self {
            name: name.into(),
            prior,
            observation,
            noise,
            target,
            forward,
            simulator: None,
            summary: None,
            latent: None,
        })
    }

    pub fn with_target(mut self, target: TargetKind) -> Result<Self> {
        target.validate()?;
        self.target = target;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.observation.len()
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        self.prior.log_density(theta)
    }

    pub fn forward_model(&self, theta: &[f64]) -> Result<DVector<f64>> {
        let f = self
            .forward
            .as_ref()
            .ok_or_else(|| Error::input(format!("problem `{}` has no forward model", self.name)))?;
        let g = f(theta)?;
        if g.len() != self.output_dim() {
            return Err(Error::input("forward model output has the wrong dimension"));
        }
        Ok(g)
    }

    /// Exact Gaussian log-likelihood `log N(y_o | G(θ), Σ)`.
    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        let g = self.forward_model(theta)?;
        Ok(self.noise.log_likelihood(&g, &self.observation))
    }

    /// Simulator for SL/ABC: the user-supplied one, else `G(θ) + ε`.
    pub fn simulator(&self) -> Result<SimulatorFn> {
        if let Some(s) = &self.simulator {
            return Ok(s.clone());
        }
        let forward = self.forward.clone().ok_or_else(|| {
            Error::input(format!(
                "problem `{}` has neither simulator nor forward model",
                self.name
            ))
        })?;
        let chol = self.noise.chol().clone();
        Ok(Arc::new(move |theta: &[f64], rng: &mut SimRng| {
            let g = forward(theta)?;
            let z = DVector::from_fn(g.len(), |_, _| StandardNormal.sample(rng));
            Ok(g + &chol * z)
        }))
    }

    /// Evaluates the emulator target at `θ`, recording simulator usage.
    pub fn evaluate_target(
        &self,
        theta: &[f64],
        ledger: &SimulationLedger,
        rng: &mut SimRng,
    ) -> Result<SimObservation> {
        if theta.len() != self.dim() {
            return Err(Error::input("parameter dimension differs from the prior"));
        }
        let deterministic = |value: Vec<f64>| {
            ledger.record(theta, 1);
            SimObservation {
                theta: theta.to_vec(),
                value,
                replicates: 1,
                simulator_calls: 1,
                flagged: false,
            }
        };
        match &self.target {
            TargetKind::ForwardModel => Ok(deterministic(self.forward_model(theta)?.iter().cloned().collect())),
            TargetKind::LogLikelihood => Ok(deterministic(vec![self.log_likelihood(theta)?])),
            TargetKind::NoisySl { replicates } => sl_loglik_estimate(
                theta,
                &self.simulator()?,
                self.summary.as_ref(),
                &self.observation,
                *replicates,
                ledger,
                rng,
            ),
            TargetKind::NoisyAbc { replicates, epsilon } => abc_loglik_estimate(
                theta,
                &self.simulator()?,
                self.summary.as_ref(),
                &self.observation,
                *replicates,
                *epsilon,
                ledger,
                rng,
            ),
            TargetKind::PseudoMarginal { replicates } => {
                let latent = self
                    .latent
                    .as_ref()
                    .ok_or_else(|| Error::input(format!("problem `{}` has no latent model", self.name)))?;
                pseudo_marginal_loglik_estimate(theta, latent, &self.observation, *replicates, ledger, rng)
            }
        }
    }
}

/// Reference posterior `π_0 · L` tabulated on a grid and normalized by the trapezoid rule.
pub fn grid_posterior_oracle(problem: &InverseProblem, grid: &Grid) -> Result<Vec<f64>> {
    if grid.dim() != problem.dim() {
        return Err(Error::input("grid dimension differs from the problem dimension"));
    }
    if grid.min_nodes_per_dim() < MIN_NODES_PER_DIM {
        return Err(Error::input(format!(
            "reference grids need at least {MIN_NODES_PER_DIM} nodes per dimension"
        )));
    }
    let logs = (0..grid.len())
        .map(|i| {
            let x = grid.node(i);
            let lp = problem.log_prior(&x);
            if lp == f64::NEG_INFINITY {
                Ok(lp)
            } else {
                Ok(lp + problem.log_likelihood(&x)?)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    normalize_on_grid(&logs, grid)
}

/// Names accepted by [`builtin`].
pub const BUILTIN_PROBLEMS: [&str; 6] = [
    "conjugate",
    "bimodal",
    "ode_decay",
    "pm_latent",
    "conjugate_sl",
    "conjugate_abc",
];

pub const CONJUGATE_NOISE_SD: f64 = 0.3;
pub const CONJUGATE_OBSERVATION: f64 = 1.0;

/// Built-in test problems.
///
/// * `conjugate`: `θ ~ N(0,1)` on `[-5,5]`, `G(θ) = θ`, `y_o = 1`, `Σ = 0.3²`.
/// * `bimodal`: `θ ~ U[-3,3]`, `G(θ) = θ²`, `y_o = 2`, `Σ = 0.5²` (modes near ±√2).
/// * `ode_decay`: `dx/dt = s − kx`, `x(0) = 1` on `[0,4]`, twelve window averages,
///   `(k, s) ~ U([0.1,2] × [0,2])`, data generated at `(0.8, 0.5)`, `Σ = 0.02² I`.
/// * `pm_latent`: `θ ~ N(0,1)` on `[-5,5]`, `z | θ ~ N(θ,1)`, `y | z ~ N(z,1)`, `y_o = 1`,
///   so the marginal likelihood is `N(1 | θ, 2)`.
/// * `conjugate_sl`, `conjugate_abc`: the conjugate problem with noisy log-likelihood targets.
pub fn builtin(name: &str) -> Result<InverseProblem> {
    let scalar = |v: f64| DVector::from_element(1, v);
    let var1 = |v: f64| DMatrix::from_element(1, 1, v);
    let identity: ForwardFn = Arc::new(|t: &[f64]| Ok(DVector::from_element(1, t[0])));
    let std_prior = || Prior::truncated_gaussian(vec![0.0], vec![1.0], vec![-5.0], vec![5.0]);
    let conjugate = || {
        InverseProblem::new(
            "conjugate",
            std_prior()?,
            scalar(CONJUGATE_OBSERVATION),
            var1(CONJUGATE_NOISE_SD.powi(2)),
            TargetKind::LogLikelihood,
            Some(identity.clone()),
        )
    };
    match name {
        "conjugate" => conjugate(),
        "conjugate_sl" => {
            let mut p = conjugate()?.with_target(TargetKind::NoisySl { replicates: 20 })?;
            p.name = name.into();
            Ok(p)
        }
        "conjugate_abc" => {
            let mut p = conjugate()?.with_target(TargetKind::NoisyAbc {
                replicates: 200,
                epsilon: 0.3,
            })?;
            p.name = name.into();
            Ok(p)
        }
        "bimodal" => InverseProblem::new(
            "bimodal",
            Prior::uniform(vec![-3.0], vec![3.0])?,
            scalar(2.0),
            var1(0.25),
            TargetKind::LogLikelihood,
            Some(Arc::new(|t: &[f64]| Ok(DVector::from_element(1, t[0] * t[0])))),
        ),
        "ode_decay" => {
            let spec = OdeSpec::linear_decay(1.0, 4.0, 240);
            let obs = ObservationOperator::WindowAverage {
                component: 0,
                windows: 12,
            };
            let y = ode_forward_model(&[0.8, 0.5], &spec, &obs)?;
            let forward: ForwardFn = Arc::new(move |t: &[f64]| ode_forward_model(t, &spec, &obs));
            InverseProblem::new(
                "ode_decay",
                Prior::uniform(vec![0.1, 0.0], vec![2.0, 2.0])?,
                y,
                DMatrix::identity(12, 12) * 0.02f64.powi(2),
                TargetKind::LogLikelihood,
                Some(forward),
            )
        }
        "pm_latent" => {
            let mut p = InverseProblem::new(
                "pm_latent",
                std_prior()?,
                scalar(1.0),
                var1(2.0),
                TargetKind::PseudoMarginal { replicates: 10 },
                Some(identity.clone()),
            )?;
            p.latent = Some(gaussian_latent_model());
            Ok(p)
        }
        other => Err(Error::input(format!(
            "unknown built-in problem `{other}` (expected one of {})",
            BUILTIN_PROBLEMS.join(", ")
        ))),
    }
}

/// `z | θ ~ N(θ, 1)`, `y | z ~ N(z, 1)`.
pub fn gaussian_latent_model() -> LatentModel {
    LatentModel {
        sample_latent: Arc::new(|theta: &[f64], rng: &mut SimRng| {
            vec![Normal::new(theta[0], 1.0).expect("unit sd").sample(rng)]
        }),
        log_conditional: Arc::new(|y: &DVector<f64>, _theta: &[f64], z: &[f64]| log_normal_pdf(y[0], z[0], 1.0)),
    }
}

/// Analytic posterior `(mean, variance)` of the conjugate problem, ignoring the
/// (negligible) prior truncation.
pub fn conjugate_posterior_moments() -> (f64, f64) {
    let noise_var = CONJUGATE_NOISE_SD.powi(2);
    let var = 1.0 / (1.0 + 1.0 / noise_var);
    (var * CONJUGATE_OBSERVATION / noise_var, var)
}

/// Deterministic forward models expressible in a JSON problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForwardSpec {
    /// `G(θ) = A θ + b`.
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
    /// Scalar polynomial `G(θ) = Σ c_i θ^i` in a one-dimensional parameter.
    Polynomial { coefficients: Vec<f64> },
    /// `dx/dt = s − kx` with `θ = (k, s)` (or `θ = k`).
    LinearDecayOde {
        x0: f64,
        t1: f64,
        #[serde(default = "default_ode_steps")]
        steps: usize,
        observation: ObservationOperator,
    },
}

fn default_ode_steps() -> usize {
    super::ode::DEFAULT_STEPS
}

impl ForwardSpec {
    pub fn build(&self) -> Result<ForwardFn> {
        match self {
            ForwardSpec::Linear { matrix, offset } => {
                let rows = matrix.len();
                let cols = matrix.first().map(Vec::len).unwrap_or(0);
                if rows == 0 || cols == 0 || matrix.iter().any(|r| r.len() != cols) {
                    return Err(Error::input("linear forward matrix must be rectangular and nonempty"));
                }
                let a = DMatrix::from_fn(rows, cols, |i, j| matrix[i][j]);
                let b = match offset {
                    Some(o) if o.len() != rows => return Err(Error::input("offset length differs from matrix rows")),
                    Some(o) => DVector::from_vec(o.clone()),
                    None => DVector::zeros(rows),
                };
                Ok(Arc::new(move |t: &[f64]| {
                    if t.len() != cols {
                        return Err(Error::input("parameter dimension differs from the forward matrix"));
                    }
                    Ok(&a * DVector::from_row_slice(t) + &b)
                }))
            }
            ForwardSpec::Polynomial { coefficients } => {
                let c = coefficients.clone();
                Ok(Arc::new(move |t: &[f64]| {
                    let v = c.iter().rev().fold(0.0, |acc, ci| acc * t[0] + ci);
                    Ok(DVector::from_element(1, v))
                }))
            }
            ForwardSpec::LinearDecayOde {
                x0,
                t1,
                steps,
                observation,
            } => {
                let spec = OdeSpec::linear_decay(*x0, *t1, *steps);
                let obs = observation.clone();
                Ok(Arc::new(move |t: &[f64]| ode_forward_model(t, &spec, &obs)))
            }
        }
    }
}

/// JSON form of a problem: a built-in by name or a custom Gaussian-noise problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Builtin {
        name: String,
        #[serde(default)]
        target: Option<TargetKind>,
    },
    Custom {
        name: String,
        prior: Prior,
        observation: Vec<f64>,
        noise_cov: Vec<Vec<f64>>,
        forward: ForwardSpec,
        target: TargetKind,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<InverseProblem> {
        match self {
            ProblemSpec::Builtin { name, target } => {
                let p = builtin(name)?;
                match target {
                    Some(t) => p.with_target(t.clone()),
                    None => Ok(p),
                }
            }
            ProblemSpec::Custom {
                name,
                prior,
                observation,
                noise_cov,
                forward,
                target,
            } => {
                let p = observation.len();
                if noise_cov.len() != p || noise_cov.iter().any(|r| r.len() != p) {
                    return Err(Error::input("noise_cov must be P x P"));
                }
                let cov = DMatrix::from_fn(p, p, |i, j| noise_cov[i][j]);
                if matches!(target, TargetKind::PseudoMarginal { .. }) {
                    return Err(Error::input("custom problems cannot declare a latent model"));
                }
                InverseProblem::new(
                    name.clone(),
                    prior.clone(),
                    DVector::from_vec(observation.clone()),
                    cov,
                    target.clone(),
                    Some(forward.build()?),
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng_stream;

    #[test]
    fn conjugate_oracle_matches_analytic_moments() {
        let p = builtin("conjugate").unwrap();
        let grid = Grid::uniform(&[-5.0], &[5.0], 512).unwrap();
        let dens = grid_posterior_oracle(&p, &grid).unwrap();
        let (m, v) = grid.moments(&dens);
        let (am, av) = conjugate_posterior_moments();
        assert!((m[0] - am).abs() < 1e-4, "{} vs {}", m[0], am);
        assert!((v[0] - av).abs() < 1e-4);
    }

    #[test]
    fn oracle_refinement_is_stable() {
        let p = builtin("conjugate").unwrap();
        let coarse = Grid::uniform(&[-5.0], &[5.0], 512).unwrap();
        let fine = Grid::uniform(&[-5.0], &[5.0], 1023).unwrap();
        let dc = grid_posterior_oracle(&p, &coarse).unwrap();
        let df = grid_posterior_oracle(&p, &fine).unwrap();
        // every other fine node coincides with a coarse node
        let sub: Vec<f64> = df.iter().step_by(2).cloned().collect();
        assert!(coarse.total_variation(&dc, &sub) < 1e-3);
    }

    #[test]
    fn flat_likelihood_gives_prior() {
        let p = InverseProblem::new(
            "flat",
            Prior::uniform(vec![0.0], vec![2.0]).unwrap(),
            DVector::from_element(1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            TargetKind::LogLikelihood,
            Some(Arc::new(|_: &[f64]| Ok(DVector::from_element(1, 0.0)))),
        )
        .unwrap();
        let grid = Grid::uniform(&[0.0], &[2.0], 64).unwrap();
        let dens = grid_posterior_oracle(&p, &grid).unwrap();
        assert!(dens.iter().all(|d| (d - 0.5).abs() < 1e-12));
    }

    #[test]
    fn coarse_grid_rejected() {
        let p = builtin("conjugate").unwrap();
        let grid = Grid::uniform(&[-5.0], &[5.0], 16).unwrap();
        assert!(grid_posterior_oracle(&p, &grid).is_err());
    }

    #[test]
    fn every_builtin_evaluates() {
        for name in BUILTIN_PROBLEMS {
            let p = builtin(name).unwrap();
            let ledger = SimulationLedger::new();
            let theta = p.prior.sample(&mut rng_stream(1, 0));
            let obs = p.evaluate_target(&theta, &ledger, &mut rng_stream(2, 0)).unwrap();
            assert!(obs.value.iter().all(|v| v.is_finite()), "{name}");
            assert_eq!(ledger.total_calls(), p.target.calls_per_evaluation(), "{name}");
        }
    }

    #[test]
    fn loglik_is_maximized_at_observation() {
        let p = builtin("conjugate").unwrap();
        let best = p.log_likelihood(&[CONJUGATE_OBSERVATION]).unwrap();
        for i in 0..50 {
            let g = -2.0 + 0.1 * i as f64;
            assert!(p.log_likelihood(&[g]).unwrap() <= best);
        }
    }

    #[test]
    fn problem_spec_roundtrip() {
        let json = r#"{"kind":"custom","name":"quad","prior":{"kind":"uniform","lo":[-1.0],"hi":[1.0]},
            "observation":[0.25],"noise_cov":[[0.01]],"forward":{"kind":"polynomial","coefficients":[0.0,0.0,1.0]},
            "target":{"kind":"log_likelihood"}}"#;
        let spec: ProblemSpec = serde_json::from_str(json).unwrap();
        let p = spec.build().unwrap();
        assert_eq!(p.forward_model(&[0.5]).unwrap()[0], 0.25);
    }
}
