use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative jitter added to kernel diagonals before escalation.
pub const BASE_RELATIVE_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
}

/// Anisotropic squared-exponential covariance
/// `k(a, b) = s² exp(-½ Σ_d (a_d - b_d)² / ℓ_d²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    lengthscales: Vec<f64>,
    signal_variance: f64,
    jitter: f64,
}

impl Kernel {
    pub fn squared_exponential(lengthscales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::input("lengthscales must be finite and strictly positive"));
        }
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::input("signal variance must be finite and strictly positive"));
        }
        Ok(Self {
            family: KernelFamily::SquaredExponential,
            lengthscales,
            signal_variance,
            jitter: BASE_RELATIVE_JITTER * signal_variance,
        })
    }

    /// Overrides the starting diagonal jitter.
    pub fn with_jitter(mut self, jitter: f64) -> Result<Self> {
        if !(jitter > 0.0 && jitter.is_finite()) {
            return Err(Error::input("jitter must be strictly positive"));
        }
        self.jitter = jitter;
        Ok(self)
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }

    /// Cross-covariance matrix between the rows of `a` and the rows of `b`.
    pub fn matrix(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let inv_l: Vec<f64> = self.lengthscales.iter().map(|l| 1.0 / l).collect();
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
            let mut r2 = 0.0;
            for k in 0..d {
                let t = (a[(i, k)] - b[(j, k)]) * inv_l[k];
                r2 += t * t;
            }
            self.signal_variance * (-0.5 * r2).exp()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFamily {
    Zero,
    Constant,
    Affine,
}

/// Prior mean function of the process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanFunction {
    Zero,
    Constant { value: f64 },
    Affine { intercept: f64, coefficients: Vec<f64> },
}

impl MeanFunction {
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        match self {
            MeanFunction::Zero => 0.0,
            MeanFunction::Constant { value } => *value,
            MeanFunction::Affine {
                intercept,
                coefficients,
            } => intercept + coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>(),
        }
    }

    pub fn eval(&self, points: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(points.nrows(), |i, _| match self {
            MeanFunction::Zero => 0.0,
            MeanFunction::Constant { value } => *value,
            MeanFunction::Affine {
                intercept,
                coefficients,
            } => {
                intercept
                    + coefficients
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c * points[(i, k)])
                        .sum::<f64>()
            }
        })
    }

    /// Least-squares fit of the given family to the responses.
    pub fn fit(family: MeanFamily, inputs: &DMatrix<f64>, responses: &DVector<f64>) -> Self {
        let n = responses.len();
        match family {
            MeanFamily::Zero => MeanFunction::Zero,
            MeanFamily::Constant => MeanFunction::Constant {
                value: responses.sum() / n as f64,
            },
            MeanFamily::Affine => {
                let d = inputs.ncols();
                if n <= d + 1 {
                    return MeanFunction::Constant {
                        value: responses.sum() / n as f64,
                    };
                }
                let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { inputs[(i, j - 1)] });
                let normal = design.transpose() * &design;
                let rhs = design.transpose() * responses;
                match normal.cholesky() {
                    Some(c) => {
                        let beta = c.solve(&rhs);
                        MeanFunction::Affine {
                            intercept: beta[0],
                            coefficients: beta.iter().skip(1).cloned().collect(),
                        }
                    }
                    None => MeanFunction::Constant {
                        value: responses.sum() / n as f64,
                    },
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_matrix_is_symmetric_with_signal_diagonal() {
        let k = Kernel::squared_exponential(vec![0.5, 2.0], 3.0).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, -1.0, 0.3, 2.0]);
        let m = k.matrix(&x, &x);
        assert!((m.clone() - m.transpose()).abs().max() == 0.0);
        for i in 0..3 {
            assert_eq!(m[(i, i)], 3.0);
        }
        assert!((m[(0, 1)] - k.eval(&[0.0, 0.0], &[1.0, -1.0])).abs() < 1e-15);
    }

    #[test]
    fn kernel_rejects_nonpositive() {
        assert!(Kernel::squared_exponential(vec![0.0], 1.0).is_err());
        assert!(Kernel::squared_exponential(vec![1.0], -1.0).is_err());
    }

    #[test]
    fn affine_mean_recovers_exact_plane() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        match MeanFunction::fit(MeanFamily::Affine, &x, &y) {
            MeanFunction::Affine {
                intercept,
                coefficients,
            } => {
                assert!((intercept - 1.0).abs() < 1e-10);
                assert!((coefficients[0] - 2.0).abs() < 1e-10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
