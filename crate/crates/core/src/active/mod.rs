//! Sequential design: acquisition criteria, batch selection, the
//! batch-sequential design loop with optional tempering, and MCMC with
//! on-the-fly emulator refinement.

mod acquisition;
mod batch;
mod design;
mod refinement;

pub(crate) use acquisition::ecu_var_ldens_impl;
pub use acquisition::{
    acq_ecu_var_fwd, acq_ecu_var_ldens, acq_maxvar_ldens, acq_weighted_ivar, current_integrated_variance,
    evaluate_acquisition, lognormal_variance, AcqValue, AcquisitionKind, RhoMeasure, RhoPoints,
};
pub use batch::{optimize_batch, sample_batch, BatchSelection, BatchStrategy};
pub use design::{
    prior_design_tv, run_active_learning, ActiveLearningConfig, DesignHistory, RoundRecord, TemperSchedule,
    TemperingConfig,
};
pub use refinement::{mh_with_refinement, RefinementHistory};
