use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::ActiveLearningConfig;
use crate::error::{Error, Result};
use crate::gp::{HyperOptions, MeanFamily, NoiseModel, DEFAULT_FEATURES};
use crate::problems::{InverseProblem, ProblemSpec, TargetKind, BUILTIN_PROBLEMS};
use crate::samplers::MhConfig;

/// How the initial design is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignLayout {
    PriorSamples,
    /// Evenly spaced over the prior box (1-D), or a square lattice (2-D).
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulatorConfig {
    pub initial_design: usize,
    pub layout: DesignLayout,
    pub mean_family: MeanFamily,
    pub hyper: HyperOptions,
    /// Defaults to a fixed zero nugget for deterministic targets and an estimated one otherwise.
    pub noise: Option<NoiseModel>,
    pub n_features: usize,
    pub variance_scale: f64,
    pub variance_offset: f64,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self {
            initial_design: 8,
            layout: DesignLayout::PriorSamples,
            mean_family: MeanFamily::Constant,
            hyper: HyperOptions::default(),
            noise: None,
            n_features: DEFAULT_FEATURES,
            variance_scale: 1.0,
            variance_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    PlugInMean,
    Eup,
    Quantile {
        alpha: f64,
    },
    MarginalMode,
    ExpectedLogLik,
    /// `draws_per_trajectory = 0` with grid mode tabulates the mixture density instead of sampling.
    Ep {
        trajectories: usize,
        draws_per_trajectory: usize,
    },
}

/// Where the estimate lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimationModeConfig {
    /// Tensor grid with `nodes` per axis over the prior box.
    Grid { nodes: usize },
    /// MCMC on the estimator (pointwise) or random-feature trajectories (EP).
    Mcmc { chains: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub mode: EstimationModeConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::PlugInMean,
            mode: EstimationModeConfig::Grid { nodes: 512 },
        }
    }
}

/// One experiment: problem, emulator, estimator, design campaign and sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// A built-in problem name or a path to a problem JSON file.
    pub problem: String,
    #[serde(default)]
    pub target: Option<TargetKind>,
    #[serde(default)]
    pub emulator: EmulatorConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub active_learning: ActiveLearningConfig,
    #[serde(default)]
    pub sampler: MhConfig,
    /// Extra paired campaigns (random acquisition and prior-only design) run by `design`.
    #[serde(default)]
    pub paired_seeds: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory relative problem paths resolve against; set when loading.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(
            if path == "." { what.to_string() } else { path },
            e.into_inner().to_string(),
        )
    })
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: Self = parse_json(text, "config")?;
        c.sync_seed();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let mut c = Self::from_json(&text)?;
        c.base_dir = path.parent().map(Path::to_path_buf);
        Ok(c)
    }

    /// A minimal config for a built-in problem.
    pub fn builtin(problem: &str, seed: u64) -> Self {
        let mut c = Self {
            seed,
            problem: problem.to_string(),
            target: None,
            emulator: EmulatorConfig::default(),
            estimator: EstimatorConfig::default(),
            active_learning: ActiveLearningConfig::default(),
            sampler: MhConfig::default(),
            paired_seeds: 0,
            output: None,
            base_dir: None,
        };
        c.sync_seed();
        c
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sync_seed();
    }

    fn sync_seed(&mut self) {
        self.active_learning.seed = self.seed;
        self.sampler.seed = self.seed;
    }

    fn validate(&self) -> Result<()> {
        if self.emulator.initial_design < 3 {
            return Err(Error::config("emulator.initial_design", "needs at least three points"));
        }
        if !(self.emulator.variance_scale >= 0.0 && self.emulator.variance_offset >= 0.0) {
            return Err(Error::config(
                "emulator.variance_scale",
                "variance adjustments must be nonnegative",
            ));
        }
        match self.estimator.kind {
            EstimatorKind::Quantile { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                return Err(Error::config("estimator.kind.alpha", "must lie in (0, 1)"))
            }
            EstimatorKind::Ep { trajectories: 0, .. } => {
                return Err(Error::config("estimator.kind.trajectories", "must be positive"))
            }
            _ => {}
        }
        match self.estimator.mode {
            EstimationModeConfig::Grid { nodes } if nodes < 2 => {
                Err(Error::config("estimator.mode.nodes", "needs at least two nodes"))
            }
            EstimationModeConfig::Mcmc { chains: 0 } => Err(Error::config("estimator.mode.chains", "must be positive")),
            _ => Ok(()),
        }
    }

    /// Resolves the problem reference and applies the target override.
    pub fn build_problem(&self) -> Result<InverseProblem> {
        let problem = if BUILTIN_PROBLEMS.contains(&self.problem.as_str()) {
            crate::problems::builtin(&self.problem)?
        } else {
            let path = match &self.base_dir {
                Some(dir) if Path::new(&self.problem).is_relative() => dir.join(&self.problem),
                _ => PathBuf::from(&self.problem),
            };
            let text = fs::read_to_string(&path).map_err(|e| {
                Error::config(
                    "problem",
                    format!("`{}` is neither a built-in nor a readable file: {e}", self.problem),
                )
            })?;
            let spec: ProblemSpec = parse_json(&text, "problem")?;
            spec.build().map_err(|e| Error::config("problem", e.to_string()))?
        };
        match &self.target {
            Some(t) => problem
                .with_target(t.clone())
                .map_err(|e| Error::config("target", e.to_string())),
            None => Ok(problem),
        }
    }
}
