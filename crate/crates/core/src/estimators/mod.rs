//! Posterior estimators built from a fitted emulator: plug-in mean, expected
//! unnormalized posterior (EUP), expected posterior (EP), quantile and
//! marginal-mode estimators, and closed-form pushforward moments.

mod estimate;
mod surrogate;

pub use estimate::{
    ep_grid_density, estimate_ep_grid, estimate_eup, estimate_mode, estimate_plug_in, estimate_pointwise,
    estimate_quantile, normalize_on_grid, sample_ep, EpMode, EstimateKind, EstimateRepr, EstimateSampler,
    EstimationMode, PosteriorEstimate,
};
pub use surrogate::{
    log_eup_fwd, log_eup_ldens, log_mode_ldens, log_plug_in, log_quantile_ldens, lognormal_moments,
    pushforward_moments_fwd, pushforward_moments_ldens, OutputPrediction, PointwiseEstimator, PushforwardMoments,
    SurrogatePosterior,
};
