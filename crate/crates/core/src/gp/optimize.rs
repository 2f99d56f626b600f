//! Type-II maximum likelihood for kernel hyperparameters: multi-start
//! Nelder–Mead in log space from quasi-random start points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::emulator::GpEmulator;
use super::kernel::{Kernel, MeanFamily, MeanFunction};
use crate::error::{Error, Result};
use crate::numeric::halton;

/// How the observation noise variance is treated during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Fixed { variance: f64 },
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperOptions {
    pub n_starts: usize,
    pub max_iterations: usize,
}

impl Default for HyperOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            max_iterations: 400,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedHyperparameters {
    pub kernel: Kernel,
    pub noise_variance: f64,
    pub mean: MeanFunction,
    pub log_marginal_likelihood: f64,
    /// Log marginal likelihood at each start point, in start order.
    pub start_values: Vec<f64>,
}

impl FittedHyperparameters {
    pub fn fit(&self, inputs: DMatrix<f64>, responses: DVector<f64>) -> Result<GpEmulator> {
        GpEmulator::fit(
            inputs,
            responses,
            self.kernel.clone(),
            self.mean.clone(),
            self.noise_variance,
        )
    }
}

struct Objective<'a> {
    inputs: &'a DMatrix<f64>,
    responses: &'a DVector<f64>,
    mean: &'a MeanFunction,
    noise: NoiseModel,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Objective<'_> {
    fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn unpack(&self, x: &[f64]) -> Option<(Kernel, f64)> {
        let d = self.inputs.ncols();
        let ls: Vec<f64> = x[..d].iter().map(|v| v.exp()).collect();
        let sv = x[d].exp();
        let noise = match self.noise {
            NoiseModel::Fixed { variance } => variance,
            NoiseModel::Estimate => x[d + 1].exp(),
        };
        Kernel::squared_exponential(ls, sv).ok().map(|k| (k, noise))
    }

    /// Negative log marginal likelihood; `+∞` when the factorization fails.
    fn value(&self, x: &[f64]) -> f64 {
        let Some((kernel, noise)) = self.unpack(x) else {
            return f64::INFINITY;
        };
        match GpEmulator::fit(
            self.inputs.clone(),
            self.responses.clone(),
            kernel,
            self.mean.clone(),
            noise,
        ) {
            Ok(gp) => {
                let v = -gp.log_marginal_likelihood();
                if v.is_finite() {
                    v
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    }
}

/// Box-clamped Nelder–Mead minimization. Returns the best vertex and its value.
fn nelder_mead(obj: &Objective<'_>, start: &[f64], step: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += if v[i] + step <= obj.upper[i] { step } else { -step };
        obj.clamp(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| obj.value(v)).collect();

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread_f = values[n] - values[0];
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if values[0].is_finite() && spread_f.abs() < 1e-10 && spread_x < 1e-8 {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect();
            obj.clamp(&mut p);
            p
        };

        let reflected = along(-1.0);
        let fr = obj.value(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = obj.value(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let contracted = if fr < values[n] { along(-0.5) } else { along(0.5) };
        let fc = obj.value(&contracted);
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let mut p: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, v)| b + 0.5 * (v - b))
                .collect();
            obj.clamp(&mut p);
            values[i] = obj.value(&p);
            simplex[i] = p;
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
        .expect("simplex is nonempty");
    (simplex[best].clone(), values[best])
}

/// Maximizes the log marginal likelihood over lengthscales, signal variance and
/// (optionally) noise variance. The mean function is fitted by least squares first.
pub fn optimize_hyperparameters(
    inputs: &DMatrix<f64>,
    responses: &DVector<f64>,
    mean_family: MeanFamily,
    noise: NoiseModel,
    options: HyperOptions,
) -> Result<FittedHyperparameters> {
    let n = inputs.nrows();
    let d = inputs.ncols();
    if n < 3 {
        return Err(Error::input(
            "hyperparameter optimization needs at least three design points",
        ));
    }
    if responses.len() != n || d == 0 {
        return Err(Error::input("inconsistent design dimensions"));
    }
    let mean = MeanFunction::fit(mean_family, inputs, responses);
    let residual = responses - mean.eval(inputs);
    let resid_var = residual.norm_squared() / n as f64;
    let scale = if resid_var > 0.0 {
        resid_var
    } else {
        (responses.norm_squared() / n as f64).max(1.0)
    };
    let ranges: Vec<f64> = (0..d)
        .map(|j| {
            let col = inputs.column(j);
            let r = col.max() - col.min();
            if r > 0.0 {
                r
            } else {
                1.0
            }
        })
        .collect();

    let estimate_noise = matches!(noise, NoiseModel::Estimate);
    let mut lower: Vec<f64> = ranges.iter().map(|r| (1e-2 * r).ln()).collect();
    let mut upper: Vec<f64> = ranges.iter().map(|r| (1e2 * r).ln()).collect();
    lower.push((1e-6 * scale).ln());
    upper.push((1e4 * scale).ln());
    if estimate_noise {
        lower.push((1e-8 * scale).ln());
        upper.push(scale.ln());
    }
    let obj = Objective {
        inputs,
        responses,
        mean: &mean,
        noise,
        lower,
        upper,
    };

    let dim = obj.lower.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_values = Vec::with_capacity(options.n_starts);
    for s in 0..options.n_starts {
        let u = halton(s as u64 + 1, dim);
        let mut start: Vec<f64> = Vec::with_capacity(dim);
        for (j, r) in ranges.iter().enumerate() {
            start.push((0.05 * r).ln() + u[j] * (40.0f64).ln());
        }
        start.push((0.1 * scale).ln() + u[d] * (100.0f64).ln());
        if estimate_noise {
            start.push((1e-6 * scale).ln() + u[d + 1] * (1e5f64).ln());
        }
        start_values.push(-obj.value(&start));
        let (x, f) = nelder_mead(&obj, &start, 0.5, options.max_iterations);
        if f.is_finite() && best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    let (x, f) = best.ok_or(Error::FittingFailure)?;
    let (kernel, noise_variance) = obj.unpack(&x).ok_or(Error::FittingFailure)?;
    Ok(FittedHyperparameters {
        kernel,
        noise_variance,
        mean,
        log_marginal_likelihood: -f,
        start_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimum_dominates_start_points() {
        let x = DMatrix::from_fn(12, 1, |i, _| i as f64 / 11.0 * 4.0 - 2.0);
        let y = DVector::from_fn(12, |i, _| (x[(i, 0)] * 1.7).sin());
        let fit = optimize_hyperparameters(
            &x,
            &y,
            MeanFamily::Zero,
            NoiseModel::Fixed { variance: 0.0 },
            HyperOptions::default(),
        )
        .unwrap();
        assert!(fit.start_values.iter().all(|s| fit.log_marginal_likelihood >= *s));
        let gp = fit.fit(x.clone(), y.clone()).unwrap();
        assert!((gp.log_marginal_likelihood() - fit.log_marginal_likelihood).abs() < 1e-9);
    }

    #[test]
    fn constant_responses_collapse_signal() {
        let x = DMatrix::from_fn(8, 1, |i, _| i as f64);
        let y = DVector::from_element(8, 5.0);
        let fit = optimize_hyperparameters(
            &x,
            &y,
            MeanFamily::Constant,
            NoiseModel::Fixed { variance: 0.0 },
            HyperOptions::default(),
        )
        .unwrap();
        assert!(fit.kernel.signal_variance() < 1e-4 * 25.0);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let y = DVector::from_vec(vec![0.0, 1.0]);
        assert!(
            optimize_hyperparameters(&x, &y, MeanFamily::Zero, NoiseModel::Estimate, HyperOptions::default()).is_err()
        );
    }
}
