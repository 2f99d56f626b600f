//! Fixed-step RK4 forward models for parameter-dependent initial value problems.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 200;

/// Right-hand side `F(x, θ, t)` of `dx/dt = F(x, θ, t)`.
pub type OdeRhs = Arc<dyn Fn(&[f64], &[f64], f64) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub struct OdeSpec {
    pub rhs: OdeRhs,
    pub initial_state: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
}

impl fmt::Debug for OdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeSpec")
            .field("initial_state", &self.initial_state)
            .field("t0", &self.t0)
            .field("t1", &self.t1)
            .field("steps", &self.steps)
            .finish()
    }
}

/// Maps the discretized trajectory of one state component to observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationOperator {
    /// State at the final time.
    Final { component: usize },
    /// State every `every` steps, excluding the initial time.
    Subsample { component: usize, every: usize },
    /// Trapezoid time-average over `windows` equal windows (e.g. monthly means).
    WindowAverage { component: usize, windows: usize },
}

impl ObservationOperator {
    pub fn output_dim(&self, steps: usize) -> usize {
        match self {
            ObservationOperator::Final { .. } => 1,
            ObservationOperator::Subsample { every, .. } => steps / every.max(&1),
            ObservationOperator::WindowAverage { windows, .. } => *windows,
        }
    }
}

impl OdeSpec {
    /// Linear decay with source, `dx/dt = s − k x` where `θ = (k, s)`; with a
    /// one-dimensional θ the source is zero.
    pub fn linear_decay(x0: f64, t1: f64, steps: usize) -> Self {
        Self {
            rhs: Arc::new(|x: &[f64], theta: &[f64], _t: f64| {
                let source = theta.get(1).copied().unwrap_or(0.0);
                vec![source - theta[0] * x[0]]
            }),
            initial_state: vec![x0],
            t0: 0.0,
            t1,
            steps,
        }
    }

    /// States at every step, including the initial state.
    pub fn integrate(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        if self.steps == 0 {
            return Err(Error::input("ODE integration needs at least one step"));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("parameters must be finite"));
        }
        let h = (self.t1 - self.t0) / self.steps as f64;
        let mut x = self.initial_state.clone();
        let mut out = Vec::with_capacity(self.steps + 1);
        out.push(x.clone());
        let axpy = |x: &[f64], k: &[f64], a: f64| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };
        for step in 0..self.steps {
            let t = self.t0 + h * step as f64;
            let k1 = (self.rhs)(&x, theta, t);
            let k2 = (self.rhs)(&axpy(&x, &k1, 0.5 * h), theta, t + 0.5 * h);
            let k3 = (self.rhs)(&axpy(&x, &k2, 0.5 * h), theta, t + 0.5 * h);
            let k4 = (self.rhs)(&axpy(&x, &k3, h), theta, t + h);
            for i in 0..x.len() {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration { step: step + 1 });
            }
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// Integrates the initial value problem at `θ` and applies the observation operator.
pub fn ode_forward_model(theta: &[f64], spec: &OdeSpec, obs: &ObservationOperator) -> Result<DVector<f64>> {
    let states = spec.integrate(theta)?;
    let component = match obs {
        ObservationOperator::Final { component }
        | ObservationOperator::Subsample { component, .. }
        | ObservationOperator::WindowAverage { component, .. } => *component,
    };
    if component >= spec.initial_state.len() {
        return Err(Error::input("observed component out of range"));
    }
    let path: Vec<f64> = states.iter().map(|s| s[component]).collect();
    match obs {
        ObservationOperator::Final { .. } => Ok(DVector::from_vec(vec![*path.last().expect("nonempty")])),
        ObservationOperator::Subsample { every, .. } => {
            if *every == 0 {
                return Err(Error::input("subsample stride must be positive"));
            }
            Ok(DVector::from_vec(
                path.iter().skip(*every).step_by(*every).cloned().collect(),
            ))
        }
        ObservationOperator::WindowAverage { windows, .. } => {
            if *windows == 0 || !spec.steps.is_multiple_of(*windows) {
                return Err(Error::input(
                    "step count must be a positive multiple of the window count",
                ));
            }
            let per = spec.steps / windows;
            Ok(DVector::from_fn(*windows, |w, _| {
                let seg = &path[w * per..=(w + 1) * per];
                let inner: f64 = seg[1..per].iter().sum();
                (0.5 * (seg[0] + seg[per]) + inner) / per as f64
            }))
        }
    }
}
