//! Small numerical helpers shared by the modules: Gaussian densities in log
//! space, standard-normal quantiles, log-sum-exp and quasi-random points.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// RNG used everywhere a reproducible stream is needed.
pub type SimRng = ChaCha8Rng;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Independent RNG stream `stream` derived from a base seed.
pub fn rng_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Quantile of the standard normal distribution.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::input(format!("probability {p} outside (0, 1)")));
    }
    let q = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    // one Newton step; erfc_inv alone is good to roughly 1e-11
    let pdf = (-0.5 * q * q).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 0.0 {
        Ok(q - (std_normal_cdf(q) - p) / pdf)
    } else {
        Ok(q)
    }
}

pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Lower Cholesky factor, `None` when the matrix is not numerically positive definite.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.unpack())
}

/// `log N(y | mean, cov)` for a dense covariance.
pub fn log_mvn_pdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky_lower(cov).ok_or_else(|| Error::SingularCovariance("Gaussian density covariance".into()))?;
    let r = y - mean;
    let z = l
        .solve_lower_triangular(&r)
        .ok_or_else(|| Error::SingularCovariance("triangular solve".into()))?;
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let p = y.len() as f64;
    Ok(-0.5 * (p * LN_2PI + log_det + z.norm_squared()))
}

/// Log-determinant of a symmetric positive definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky_lower(m).ok_or_else(|| Error::SingularCovariance("log-determinant".into()))?;
    Ok(2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Radical inverse of `index` in base `base`.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Point `index` (1-based recommended) of the Halton sequence in `[0,1)^dim`.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| radical_inverse(index, PRIMES[d % PRIMES.len()]))
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[0.01, 0.2, 0.5, 0.841_344_746, 0.99] {
            let q = std_normal_quantile(p).unwrap();
            assert!(
                (std_normal_cdf(q) - p).abs() < 1e-12,
                "p={p} err={}",
                std_normal_cdf(q) - p
            );
        }
        assert!(std_normal_quantile(0.5).unwrap().abs() < 1e-15);
        assert!(std_normal_quantile(1.0).is_err());
    }

    #[test]
    fn mvn_matches_univariate() {
        let y = DVector::from_vec(vec![0.3]);
        let m = DVector::from_vec(vec![-0.1]);
        let c = DMatrix::from_element(1, 1, 2.5);
        let a = log_mvn_pdf(&y, &m, &c).unwrap();
        assert!((a - log_normal_pdf(0.3, -0.1, 2.5)).abs() < 1e-14);
    }

    #[test]
    fn halton_is_in_unit_cube() {
        for i in 1..100 {
            assert!(halton(i, 3).iter().all(|&v| (0.0..1.0).contains(&v)));
        }
        assert_eq!(halton(1, 2), vec![0.5, 1.0 / 3.0]);
    }
}
