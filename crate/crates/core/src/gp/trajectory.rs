//! Sampling whole functions from a fitted emulator.
//!
//! Grid mode draws the process jointly on a fixed evaluation set. Feature mode
//! builds a random-Fourier-feature prior draw and corrects it with an exact
//! kriging update on the design residuals, which gives a function that can be
//! evaluated at arbitrary inputs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::emulator::GpEmulator;
use super::kernel::KernelFamily;
use crate::error::{Error, Result};

pub const DEFAULT_FEATURES: usize = 2048;

#[derive(Debug, Clone)]
pub enum TrajectoryMode {
    Grid { points: DMatrix<f64> },
    Features { n_features: usize },
}

#[derive(Debug, Clone)]
pub enum TrajectoryRealization {
    Grid { points: DMatrix<f64>, values: DVector<f64> },
    Features(FeatureTrajectory),
}

/// Pathwise-conditioned sample path `f(x) = m(x) + g(x) + k(x, X) v`, where `g`
/// is a random-feature prior draw and `v` corrects it onto the design data.
#[derive(Debug, Clone)]
pub struct FeatureTrajectory {
    gp: GpEmulator,
    frequencies: DMatrix<f64>,
    phases: DVector<f64>,
    weights: DVector<f64>,
    amplitude: f64,
    correction: DVector<f64>,
}

impl FeatureTrajectory {
    fn prior_at(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for f in 0..self.frequencies.nrows() {
            let mut arg = self.phases[f];
            for (d, xd) in x.iter().enumerate() {
                arg += self.frequencies[(f, d)] * xd;
            }
            acc += self.weights[f] * arg.cos();
        }
        self.amplitude * acc
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let k = self.gp.kernel();
        let inputs = self.gp.inputs();
        let mut corr = 0.0;
        for i in 0..inputs.nrows() {
            let row: Vec<f64> = inputs.row(i).iter().cloned().collect();
            corr += k.eval(x, &row) * self.correction[i];
        }
        self.gp.mean_function().eval_point(x) + self.prior_at(x) + corr
    }
}

impl TrajectoryRealization {
    /// Value at `x`. Grid realizations are only defined on their nodes and
    /// return `None` elsewhere.
    pub fn evaluate(&self, x: &[f64]) -> Option<f64> {
        match self {
            TrajectoryRealization::Grid { points, values } => (0..points.nrows())
                .find(|&i| points.row(i).iter().zip(x).all(|(a, b)| a == b))
                .map(|i| values[i]),
            TrajectoryRealization::Features(f) => Some(f.evaluate(x)),
        }
    }

    /// Values at the rows of `points`.
    pub fn evaluate_many(&self, points: &DMatrix<f64>) -> Option<Vec<f64>> {
        (0..points.nrows())
            .map(|i| {
                let row: Vec<f64> = points.row(i).iter().cloned().collect();
                self.evaluate(&row)
            })
            .collect()
    }

    pub fn grid_values(&self) -> Option<&DVector<f64>> {
        match self {
            TrajectoryRealization::Grid { values, .. } => Some(values),
            _ => None,
        }
    }
}

impl GpEmulator {
    pub fn sample_trajectory<R: Rng + ?Sized>(
        &self,
        mode: &TrajectoryMode,
        rng: &mut R,
    ) -> Result<TrajectoryRealization> {
        match mode {
            TrajectoryMode::Grid { points } => {
                let sampler = self.marginal_sampler(points)?;
                Ok(TrajectoryRealization::Grid {
                    points: points.clone(),
                    values: sampler.draw(rng),
                })
            }
            TrajectoryMode::Features { n_features } => Ok(TrajectoryRealization::Features(
                self.feature_trajectory(*n_features, rng)?,
            )),
        }
    }

    pub fn feature_trajectory<R: Rng + ?Sized>(&self, n_features: usize, rng: &mut R) -> Result<FeatureTrajectory> {
        match self.kernel().family {
            KernelFamily::SquaredExponential => {}
        }
        if n_features == 0 {
            return Err(Error::input("feature trajectories need at least one feature"));
        }
        let d = self.dim();
        let ls = self.kernel().lengthscales();
        let frequencies = DMatrix::from_fn(n_features, d, |_, j| rng.sample::<f64, _>(StandardNormal) / ls[j]);
        let phases = DVector::from_fn(n_features, |_, _| rng.random::<f64>() * 2.0 * PI);
        let weights = DVector::from_fn(n_features, |_, _| rng.sample::<f64, _>(StandardNormal));
        let amplitude = (2.0 * self.kernel().signal_variance() / n_features as f64).sqrt();
        let mut traj = FeatureTrajectory {
            gp: self.clone(),
            frequencies,
            phases,
            weights,
            amplitude,
            correction: DVector::zeros(self.n_design()),
        };
        let noise_sd = (self.noise_variance() + self.jitter()).sqrt();
        let inputs = self.inputs();
        let residual = DVector::from_fn(self.n_design(), |i, _| {
            let row: Vec<f64> = inputs.row(i).iter().cloned().collect();
            let eps = noise_sd * rng.sample::<f64, _>(StandardNormal);
            self.responses()[i] - self.mean_function().eval_point(&row) - traj.prior_at(&row) - eps
        });
        let l = self.chol();
        let z = l.solve_lower_triangular(&residual).expect("nonzero diagonal");
        traj.correction = l.tr_solve_lower_triangular(&z).expect("nonzero diagonal");
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Kernel, MeanFunction};
    use crate::numeric::rng_stream;

    fn gp() -> GpEmulator {
        let x = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 1.2]);
        let y = DVector::from_vec(vec![0.5, -0.4, 0.9]);
        let k = Kernel::squared_exponential(vec![0.6], 1.0).unwrap();
        GpEmulator::fit(x, y, k, MeanFunction::Zero, 0.0).unwrap()
    }

    #[test]
    fn grid_trajectory_on_design_reproduces_responses() {
        let g = gp();
        let mode = TrajectoryMode::Grid {
            points: g.inputs().clone(),
        };
        let t = g.sample_trajectory(&mode, &mut rng_stream(1, 0)).unwrap();
        let v = t.grid_values().unwrap();
        for i in 0..3 {
            assert!((v[i] - g.responses()[i]).abs() < 1e-4);
        }
        assert!(t.evaluate(&[0.37]).is_none());
    }

    #[test]
    fn feature_trajectory_is_a_fixed_function() {
        let g = gp();
        let t = g
            .sample_trajectory(&TrajectoryMode::Features { n_features: 256 }, &mut rng_stream(2, 0))
            .unwrap();
        assert_eq!(t.evaluate(&[0.41]), t.evaluate(&[0.41]));
        // noiseless conditioning pins the path at the design points
        assert!((t.evaluate(&[0.0]).unwrap() + 0.4).abs() < 1e-3);
    }
}
