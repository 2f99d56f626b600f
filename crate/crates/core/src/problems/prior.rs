use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{std_normal_cdf, std_normal_quantile, LN_2PI};

/// Prior on a bounded box. Every prior here has bounded support so that
/// surrogate-induced normalizing constants exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Independent Gaussians, each truncated to `[lo_d, hi_d]`.
    TruncatedGaussian {
        mean: Vec<f64>,
        sd: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl Prior {
    pub fn uniform(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let p = Prior::Uniform { lo, hi };
        p.validate()?;
        Ok(p)
    }

    pub fn truncated_gaussian(mean: Vec<f64>, sd: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let p = Prior::TruncatedGaussian { mean, sd, lo, hi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::input("prior bounds must be nonempty and of equal length"));
        }
        if lo
            .iter()
            .zip(hi)
            .any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::input("prior bounds need lo < hi, both finite"));
        }
        if let Prior::TruncatedGaussian { mean, sd, .. } = self {
            if mean.len() != lo.len() || sd.len() != lo.len() {
                return Err(Error::input("prior mean/sd dimensions differ from bounds"));
            }
            if sd.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::input("prior standard deviations must be positive"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds().0.len()
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        match self {
            Prior::Uniform { lo, hi } | Prior::TruncatedGaussian { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        let (lo, hi) = self.bounds();
        theta.len() == lo.len()
            && theta
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(t, (a, b))| *t >= *a && *t <= *b)
    }

    /// Normalized log-density; `-∞` outside the support.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if !self.contains(theta) {
            return f64::NEG_INFINITY;
        }
        match self {
            Prior::Uniform { lo, hi } => -lo.iter().zip(hi).map(|(a, b)| (b - a).ln()).sum::<f64>(),
            Prior::TruncatedGaussian { mean, sd, lo, hi } => (0..lo.len())
                .map(|d| {
                    let z = (theta[d] - mean[d]) / sd[d];
                    let mass = std_normal_cdf((hi[d] - mean[d]) / sd[d]) - std_normal_cdf((lo[d] - mean[d]) / sd[d]);
                    -0.5 * (LN_2PI + z * z) - sd[d].ln() - mass.ln()
                })
                .sum(),
        }
    }

    pub fn density(&self, theta: &[f64]) -> f64 {
        self.log_density(theta).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Prior::Uniform { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                .collect(),
            Prior::TruncatedGaussian { mean, sd, lo, hi } => (0..lo.len())
                .map(|d| {
                    let a = std_normal_cdf((lo[d] - mean[d]) / sd[d]);
                    let b = std_normal_cdf((hi[d] - mean[d]) / sd[d]);
                    let mut u = a + (b - a) * rng.random::<f64>();
                    u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                    let x = mean[d] + sd[d] * std_normal_quantile(u).expect("u in (0,1)");
                    x.clamp(lo[d], hi[d])
                })
                .collect(),
        }
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Marginal CDF of coordinate `d`.
    pub fn marginal_cdf(&self, d: usize, x: f64) -> f64 {
        let (lo, hi) = self.bounds();
        if x <= lo[d] {
            return 0.0;
        }
        if x >= hi[d] {
            return 1.0;
        }
        match self {
            Prior::Uniform { .. } => (x - lo[d]) / (hi[d] - lo[d]),
            Prior::TruncatedGaussian { mean, sd, .. } => {
                let a = std_normal_cdf((lo[d] - mean[d]) / sd[d]);
                let b = std_normal_cdf((hi[d] - mean[d]) / sd[d]);
                (std_normal_cdf((x - mean[d]) / sd[d]) - a) / (b - a)
            }
        }
    }

    /// A representative scale per dimension (box width).
    pub fn widths(&self) -> Vec<f64> {
        let (lo, hi) = self.bounds();
        lo.iter().zip(hi).map(|(a, b)| b - a).collect()
    }
}
