use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("covariance factorization failed ({context}) after jitter escalation to {jitter:e}")]
    Factorization { context: String, jitter: f64 },

    #[error("degenerate update: {0}")]
    DegenerateUpdate(String),

    #[error("unsupported kernel for {0}")]
    UnsupportedKernel(String),

    #[error("hyperparameter fitting failed: every start point failed to factorize")]
    FittingFailure,

    #[error("integration failed at step {step}: non-finite state")]
    Integration { step: usize },

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("simulator failure: {0}")]
    Simulator(String),

    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    #[error("sampler initialization failed: {0}")]
    Initialization(String),

    #[error("chains of unequal length ({0} vs {1})")]
    UnequalChains(usize, usize),

    #[error("empty sample reservoir")]
    EmptyReservoir,

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
