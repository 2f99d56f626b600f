use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::{cholesky_lower, LN_2PI};

/// Gaussian observation model `y = g + ε`, `ε ~ N(0, Σ)`, with Σ factorized once.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl GaussianNoise {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(Error::input("noise covariance must be a nonempty square matrix"));
        }
        if (cov.clone() - cov.transpose()).abs().max() > 1e-12 * cov.abs().max() {
            return Err(Error::input("noise covariance must be symmetric"));
        }
        let chol = cholesky_lower(&cov)
            .ok_or_else(|| Error::SingularCovariance("noise covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { cov, chol, log_det })
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `‖y − g‖²_Σ = (y − g)ᵀ Σ⁻¹ (y − g)`.
    pub fn weighted_norm2(&self, y: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let r = y - g;
        self.chol
            .solve_lower_triangular(&r)
            .expect("noise factor has a nonzero diagonal")
            .norm_squared()
    }

    pub fn log_likelihood(&self, g: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let p = self.dim() as f64;
        -0.5 * p * LN_2PI - 0.5 * self.log_det - 0.5 * self.weighted_norm2(y, g)
    }

    /// `tr(Σ⁻¹ D)` for a diagonal matrix `D = diag(d)`.
    pub fn trace_inv_times_diag(&self, d: &[f64]) -> f64 {
        let p = self.dim();
        let identity = DMatrix::<f64>::identity(p, p);
        let linv = self.chol.solve_lower_triangular(&identity).expect("nonzero diagonal");
        (0..p).map(|i| d[i] * linv.column(i).norm_squared()).sum()
    }
}

/// `log N(y_o | g, Σ) = −(P/2) log 2π − ½ log det Σ − ½ ‖y_o − g‖²_Σ`.
pub fn gaussian_loglik(g: &DVector<f64>, y_obs: &DVector<f64>, noise_cov: &DMatrix<f64>) -> Result<f64> {
    if g.len() != y_obs.len() || noise_cov.nrows() != g.len() {
        return Err(Error::input(
            "model output, observation and noise covariance dimensions differ",
        ));
    }
    Ok(GaussianNoise::new(noise_cov.clone())?.log_likelihood(g, y_obs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_mode() {
        let v = gaussian_loglik(
            &DVector::from_vec(vec![0.0]),
            &DVector::from_vec(vec![0.0]),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        assert!((v + 0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn bivariate_mode() {
        let y = DVector::from_vec(vec![0.3, -2.0]);
        let v = gaussian_loglik(&y, &y, &DMatrix::identity(2, 2)).unwrap();
        assert!((v + 1.837_877_1).abs() < 1e-7);
    }

    #[test]
    fn singular_noise_is_rejected() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(GaussianNoise::new(c).is_err());
    }
}
