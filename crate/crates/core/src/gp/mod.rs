//! Gaussian-process emulators: exact conditioning, blockwise updates,
//! look-ahead variances, marginal and trajectory sampling, hyperparameter
//! fitting and leave-one-out diagnostics.

mod emulator;
mod kernel;
mod optimize;
mod trajectory;

pub use emulator::{points_from_rows, GpEmulator, GpSnapshot, LooPoint, MarginalSampler, PredictiveDistribution};
pub use kernel::{Kernel, KernelFamily, MeanFamily, MeanFunction, BASE_RELATIVE_JITTER};
pub use optimize::{optimize_hyperparameters, FittedHyperparameters, HyperOptions, NoiseModel};
pub use trajectory::{FeatureTrajectory, TrajectoryMode, TrajectoryRealization, DEFAULT_FEATURES};
