//! Bayesian inverse problems: priors, Gaussian likelihoods, ODE forward
//! models, stochastic simulators with noisy log-likelihood estimators, and
//! the built-in test problems.

mod likelihood;
mod noisy;
mod ode;
mod prior;
mod problem;

pub use likelihood::{gaussian_loglik, GaussianNoise};
pub use noisy::{
    abc_loglik_estimate, pseudo_marginal_loglik_estimate, sl_loglik_estimate, LatentModel, LedgerEntry, SimObservation,
    SimulationLedger, SimulatorFn, SummaryFn,
};
pub use ode::{ode_forward_model, ObservationOperator, OdeRhs, OdeSpec, DEFAULT_STEPS};
pub use prior::Prior;
pub use problem::{
    builtin, conjugate_posterior_moments, gaussian_latent_model, grid_posterior_oracle, ForwardFn, ForwardSpec,
    InverseProblem, ProblemSpec, TargetKind, BUILTIN_PROBLEMS, CONJUGATE_NOISE_SD, CONJUGATE_OBSERVATION,
};
