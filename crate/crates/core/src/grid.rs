//! Tensor-product evaluation grids in one or two dimensions with trapezoid
//! quadrature weights.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum nodes per axis accepted for reference computations.
pub const MIN_NODES_PER_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
}

impl Grid {
    /// Evenly spaced grid with `nodes` points per axis over `[lo_d, hi_d]`.
    pub fn uniform(lo: &[f64], hi: &[f64], nodes: usize) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > 2 {
            return Err(Error::input("grids support one or two dimensions"));
        }
        if nodes < 2 {
            return Err(Error::input("a grid axis needs at least two nodes"));
        }
        let axes = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| {
                let h = (b - a) / (nodes - 1) as f64;
                (0..nodes)
                    .map(|i| if i == nodes - 1 { b } else { a + h * i as f64 })
                    .collect()
            })
            .collect();
        Ok(Self { axes })
    }

    pub fn from_axes(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::input("grids support one or two dimensions"));
        }
        for axis in &axes {
            if axis.len() < 2 || axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::input("grid axes must be strictly increasing with >= 2 nodes"));
            }
        }
        Ok(Self { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_nodes_per_dim(&self) -> usize {
        self.axes.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Node `i` in row-major order (last axis fastest).
    pub fn node(&self, i: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axes[0][i]],
            _ => {
                let n1 = self.axes[1].len();
                vec![self.axes[0][i / n1], self.axes[1][i % n1]]
            }
        }
    }

    pub fn nodes(&self) -> DMatrix<f64> {
        let n = self.len();
        let d = self.dim();
        DMatrix::from_fn(n, d, |i, j| self.node(i)[j])
    }

    fn axis_weights(axis: &[f64]) -> Vec<f64> {
        let n = axis.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
                let right = if i + 1 < n { axis[i + 1] - axis[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    /// Trapezoid quadrature weights, one per node.
    pub fn weights(&self) -> Vec<f64> {
        let w: Vec<Vec<f64>> = self.axes.iter().map(|a| Self::axis_weights(a)).collect();
        match w.len() {
            1 => w[0].clone(),
            _ => {
                let mut out = Vec::with_capacity(self.len());
                for a in &w[0] {
                    for b in &w[1] {
                        out.push(a * b);
                    }
                }
                out
            }
        }
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights().iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Total-variation distance between two densities tabulated on this grid.
    pub fn total_variation(&self, p: &[f64], q: &[f64]) -> f64 {
        0.5 * self
            .weights()
            .iter()
            .zip(p.iter().zip(q))
            .map(|(w, (a, b))| w * (a - b).abs())
            .sum::<f64>()
    }

    /// Mean and per-coordinate variance of a density tabulated on the grid.
    pub fn moments(&self, density: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let w = self.weights();
        let d = self.dim();
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d];
        for (i, (wi, pi)) in w.iter().zip(density).enumerate() {
            let x = self.node(i);
            for k in 0..d {
                mean[k] += wi * pi * x[k];
                second[k] += wi * pi * x[k] * x[k];
            }
        }
        let var = mean.iter().zip(&second).map(|(m, s)| s - m * m).collect();
        (mean, var)
    }

    /// Cell `[left, right]` owned by node `i` along one axis (midpoints to neighbours).
    fn cell(axis: &[f64], i: usize) -> (f64, f64) {
        let n = axis.len();
        let left = if i > 0 { 0.5 * (axis[i - 1] + axis[i]) } else { axis[0] };
        let right = if i + 1 < n {
            0.5 * (axis[i] + axis[i + 1])
        } else {
            axis[n - 1]
        };
        (left, right)
    }

    /// Draws a point from a tabulated density: a node is chosen with probability
    /// equal to its quadrature mass, then the point is placed uniformly in the node's cell.
    pub fn sample_from_density<R: Rng + ?Sized>(&self, density: &[f64], rng: &mut R) -> Vec<f64> {
        let cdf = self.mass_cdf(density);
        self.sample_with_cdf(&cdf, rng)
    }

    /// Cumulative quadrature mass over nodes, normalized to end at one.
    pub fn mass_cdf(&self, density: &[f64]) -> Vec<f64> {
        let w = self.weights();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = w
            .iter()
            .zip(density)
            .map(|(wi, pi)| {
                acc += wi * pi.max(0.0);
                acc
            })
            .collect();
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        cdf
    }

    /// Index of the node whose cell contains `x` along one axis.
    fn cell_index(axis: &[f64], x: f64) -> usize {
        let i = axis.partition_point(|&a| a < x);
        if i == 0 {
            0
        } else if i >= axis.len() {
            axis.len() - 1
        } else if x - axis[i - 1] < axis[i] - x {
            i - 1
        } else {
            i
        }
    }

    /// Histogram density of `samples` with one bin per node cell, scaled so that
    /// it integrates to one under [`Grid::integrate`].
    pub fn histogram_density(&self, samples: &[Vec<f64>]) -> Vec<f64> {
        let mut counts = vec![0.0; self.len()];
        for s in samples {
            let idx = match self.dim() {
                1 => Self::cell_index(&self.axes[0], s[0]),
                _ => Self::cell_index(&self.axes[0], s[0]) * self.axes[1].len() + Self::cell_index(&self.axes[1], s[1]),
            };
            counts[idx] += 1.0;
        }
        let n = samples.len().max(1) as f64;
        counts
            .iter()
            .zip(self.weights())
            .map(|(c, w)| if w > 0.0 { c / (n * w) } else { 0.0 })
            .collect()
    }

    pub fn sample_with_cdf<R: Rng + ?Sized>(&self, cdf: &[f64], rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let idx = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
        let mut out = Vec::with_capacity(self.dim());
        let (i0, i1) = match self.dim() {
            1 => (idx, 0),
            _ => (idx / self.axes[1].len(), idx % self.axes[1].len()),
        };
        for (k, axis) in self.axes.iter().enumerate() {
            let i = if k == 0 { i0 } else { i1 };
            let (a, b) = Self::cell(axis, i);
            out.push(a + (b - a) * rng.random::<f64>());
        }
        out
    }
}
