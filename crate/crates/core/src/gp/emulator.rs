use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::kernel::{Kernel, MeanFunction};
use crate::error::{Error, Result};
use crate::numeric::LN_2PI;

/// Number of times the diagonal jitter is doubled before giving up.
pub const MAX_JITTER_DOUBLINGS: usize = 8;

/// A Gaussian process conditioned on a design, with its Cholesky factor cached.
///
/// Fitting and updating return new values; a fitted emulator is never mutated,
/// so it can be shared across threads for prediction and sampling.
#[derive(Debug, Clone)]
pub struct GpEmulator {
    inputs: DMatrix<f64>,
    responses: DVector<f64>,
    noise_variance: f64,
    kernel: Kernel,
    mean: MeanFunction,
    jitter: f64,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

/// Joint predictive distribution at a batch of points.
#[derive(Debug, Clone)]
pub struct PredictiveDistribution {
    pub points: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub includes_noise: bool,
}

impl PredictiveDistribution {
    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }
}

/// Exact leave-one-out predictive summary of one design point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LooPoint {
    pub loo_mean: f64,
    pub loo_variance: f64,
    pub standardized_residual: f64,
    pub log_score: f64,
}

/// Serializable record of a fitted emulator (hyperparameters and design data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub kernel: Kernel,
    pub mean: MeanFunction,
    pub noise_variance: f64,
    pub jitter: f64,
    pub inputs: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

/// Builds an `n × d` matrix from row vectors.
pub fn points_from_rows(points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = points.first().map(Vec::len).unwrap_or(0);
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::input("points have inconsistent dimensions"));
    }
    Ok(DMatrix::from_fn(points.len(), d, |i, j| points[i][j]))
}

fn has_duplicate_rows(a: &DMatrix<f64>) -> bool {
    for i in 0..a.nrows() {
        for j in (i + 1)..a.nrows() {
            if a.row(i) == a.row(j) {
                return true;
            }
        }
    }
    false
}

/// Lower Cholesky factor of `m + jitter·I`, doubling the jitter on failure.
pub(crate) fn escalating_cholesky(m: &DMatrix<f64>, start_jitter: f64, context: &str) -> Result<(DMatrix<f64>, f64)> {
    let mut jitter = start_jitter;
    for _ in 0..=MAX_JITTER_DOUBLINGS {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(c) = a.cholesky() {
            return Ok((c.unpack(), jitter));
        }
        jitter *= 2.0;
    }
    Err(Error::Factorization {
        context: context.to_string(),
        jitter: jitter / 2.0,
    })
}

fn solve_spd(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let z = l
        .solve_lower_triangular(b)
        .expect("cholesky factor has a nonzero diagonal");
    l.tr_solve_lower_triangular(&z)
        .expect("cholesky factor has a nonzero diagonal")
}

impl GpEmulator {
    /// Conditions the process on `(inputs, responses)` with fixed hyperparameters.
    pub fn fit(
        inputs: DMatrix<f64>,
        responses: DVector<f64>,
        kernel: Kernel,
        mean: MeanFunction,
        noise_variance: f64,
    ) -> Result<Self> {
        let n = inputs.nrows();
        if n == 0 {
            return Err(Error::input("at least one design point is required"));
        }
        if responses.len() != n {
            return Err(Error::input(format!(
                "{} design inputs but {} responses",
                n,
                responses.len()
            )));
        }
        if inputs.ncols() != kernel.dim() {
            return Err(Error::input(format!(
                "inputs have dimension {} but the kernel has {} lengthscales",
                inputs.ncols(),
                kernel.dim()
            )));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::input("noise variance must be finite and nonnegative"));
        }
        if inputs.iter().chain(responses.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("design data must be finite"));
        }
        if noise_variance == 0.0 && has_duplicate_rows(&inputs) {
            return Err(Error::input("duplicate design points are not allowed without noise"));
        }
        let mut k = kernel.matrix(&inputs, &inputs);
        for i in 0..n {
            k[(i, i)] += noise_variance;
        }
        let (chol, jitter) = escalating_cholesky(&k, kernel.jitter(), "kernel matrix")?;
        let residual = &responses - mean.eval(&inputs);
        let alpha = solve_spd(&chol, &residual);
        Ok(Self {
            inputs,
            responses,
            noise_variance,
            kernel,
            mean,
            jitter,
            chol,
            alpha,
        })
    }

    pub fn from_snapshot(snapshot: &GpSnapshot) -> Result<Self> {
        let inputs = points_from_rows(&snapshot.inputs)?;
        let kernel = snapshot.kernel.clone().with_jitter(snapshot.jitter)?;
        Self::fit(
            inputs,
            DVector::from_vec(snapshot.responses.clone()),
            kernel,
            snapshot.mean.clone(),
            snapshot.noise_variance,
        )
    }

    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            kernel: self.kernel.clone(),
            mean: self.mean.clone(),
            noise_variance: self.noise_variance,
            jitter: self.jitter,
            inputs: rows(&self.inputs),
            responses: self.responses.iter().cloned().collect(),
        }
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn mean_function(&self) -> &MeanFunction {
        &self.mean
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Diagonal jitter actually used by the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_design(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub(crate) fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    fn check_points(&self, points: &DMatrix<f64>) -> Result<()> {
        if points.ncols() != self.dim() {
            return Err(Error::input(format!(
                "query points have dimension {} but the emulator has {}",
                points.ncols(),
                self.dim()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("query points must be finite"));
        }
        Ok(())
    }

    /// `L⁻¹ k(X, points)`.
    fn whitened_cross(&self, points: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let kx = self.kernel.matrix(&self.inputs, points);
        let v = self
            .chol
            .solve_lower_triangular(&kx)
            .expect("cholesky factor has a nonzero diagonal");
        (kx, v)
    }

    /// Joint predictive distribution of the latent process (or of the noisy
    /// observation process when `include_noise`).
    pub fn predict(&self, points: &DMatrix<f64>, include_noise: bool) -> Result<PredictiveDistribution> {
        self.check_points(points)?;
        let (kx, v) = self.whitened_cross(points);
        let mean = self.mean.eval(points) + kx.transpose() * &self.alpha;
        let mut cov = self.kernel.matrix(points, points) - v.transpose() * &v;
        cov = 0.5 * (&cov + cov.transpose());
        for i in 0..cov.nrows() {
            if cov[(i, i)] < 0.0 {
                log::debug!("clamping negative predictive variance {:e} to zero", cov[(i, i)]);
                cov[(i, i)] = 0.0;
            }
            if include_noise {
                cov[(i, i)] += self.noise_variance;
            }
        }
        Ok(PredictiveDistribution {
            points: points.clone(),
            mean,
            cov,
            includes_noise: include_noise,
        })
    }

    /// Pointwise predictive means and latent variances without forming the full covariance.
    pub fn predict_marginal(&self, points: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_points(points)?;
        let (kx, v) = self.whitened_cross(points);
        let mean = self.mean.eval(points) + kx.transpose() * &self.alpha;
        let sv = self.kernel.signal_variance();
        let var = DVector::from_fn(points.nrows(), |i, _| {
            let s = sv - v.column(i).norm_squared();
            if s < 0.0 {
                log::debug!("clamping negative predictive variance {s:e} to zero");
                0.0
            } else {
                s
            }
        });
        Ok((mean, var))
    }

    pub fn predict_point(&self, x: &[f64]) -> Result<(f64, f64)> {
        let p = DMatrix::from_row_slice(1, x.len(), x);
        let (m, v) = self.predict_marginal(&p)?;
        Ok((m[0], v[0]))
    }

    /// Predictive cross-covariance `k_N(a, b)` of the latent process.
    pub fn predictive_cross_cov(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_points(a)?;
        self.check_points(b)?;
        let (_, va) = self.whitened_cross(a);
        let (_, vb) = self.whitened_cross(b);
        Ok(self.kernel.matrix(a, b) - va.transpose() * vb)
    }

    /// Conditions on additional data with hyperparameters held fixed, extending
    /// the cached factorization blockwise.
    pub fn update(&self, new_inputs: &DMatrix<f64>, new_responses: &DVector<f64>) -> Result<Self> {
        let b = new_inputs.nrows();
        if b == 0 {
            return Ok(self.clone());
        }
        if new_responses.len() != b {
            return Err(Error::input(format!(
                "{b} new inputs but {} responses",
                new_responses.len()
            )));
        }
        self.check_points(new_inputs)?;
        if new_responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("new responses must be finite"));
        }
        if self.noise_variance == 0.0 {
            for i in 0..b {
                let row = new_inputs.row(i);
                if (0..self.n_design()).any(|j| self.inputs.row(j) == row)
                    || ((i + 1)..b).any(|j| new_inputs.row(j) == row)
                {
                    return Err(Error::DegenerateUpdate(format!(
                        "batch point {i} duplicates a noiseless design point"
                    )));
                }
            }
        }
        let n = self.n_design();
        let (_, v) = self.whitened_cross(new_inputs);
        let mut schur = self.kernel.matrix(new_inputs, new_inputs) - v.transpose() * &v;
        for i in 0..b {
            schur[(i, i)] += self.noise_variance + self.jitter;
        }
        let l22 = schur
            .cholesky()
            .ok_or_else(|| Error::DegenerateUpdate("Schur complement is not positive definite".into()))?
            .unpack();
        let mut chol = DMatrix::zeros(n + b, n + b);
        chol.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        chol.view_mut((n, 0), (b, n)).copy_from(&v.transpose());
        chol.view_mut((n, n), (b, b)).copy_from(&l22);

        let mut inputs = DMatrix::zeros(n + b, self.dim());
        inputs.view_mut((0, 0), (n, self.dim())).copy_from(&self.inputs);
        inputs.view_mut((n, 0), (b, self.dim())).copy_from(new_inputs);
        let mut responses = DVector::zeros(n + b);
        responses.rows_mut(0, n).copy_from(&self.responses);
        responses.rows_mut(n, b).copy_from(new_responses);
        let residual = &responses - self.mean.eval(&inputs);
        let alpha = solve_spd(&chol, &residual);
        Ok(Self {
            inputs,
            responses,
            noise_variance: self.noise_variance,
            kernel: self.kernel.clone(),
            mean: self.mean.clone(),
            jitter: self.jitter,
            chol,
            alpha,
        })
    }

    /// Latent predictive variance at `queries` after hypothetically conditioning on
    /// observations at `batch`; responses are not needed because the predictive
    /// kernel depends only on input locations.
    pub fn conditional_variance(&self, batch: &DMatrix<f64>, queries: &DMatrix<f64>) -> Result<DVector<f64>> {
        let (_, base_var) = self.predict_marginal(queries)?;
        if batch.nrows() == 0 {
            return Ok(base_var);
        }
        let reduction = self.variance_reduction(batch, queries)?;
        Ok(DVector::from_fn(queries.nrows(), |i, _| {
            (base_var[i] - reduction[i]).max(0.0)
        }))
    }

    /// `s²_N(θ) − s²_{N+B}(θ; batch)` at each query point.
    pub fn variance_reduction(&self, batch: &DMatrix<f64>, queries: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_points(batch)?;
        self.check_points(queries)?;
        let b = batch.nrows();
        if b == 0 {
            return Ok(DVector::zeros(queries.nrows()));
        }
        let (_, vb) = self.whitened_cross(batch);
        let (_, vq) = self.whitened_cross(queries);
        let mut kbb = self.kernel.matrix(batch, batch) - vb.transpose() * &vb;
        for i in 0..b {
            kbb[(i, i)] += self.noise_variance + self.jitter;
        }
        let kqb = self.kernel.matrix(queries, batch) - vq.transpose() * &vb;
        let lbb = kbb
            .cholesky()
            .ok_or_else(|| Error::Factorization {
                context: "batch predictive covariance".into(),
                jitter: self.jitter,
            })?
            .unpack();
        let w = lbb
            .solve_lower_triangular(&kqb.transpose())
            .expect("cholesky factor has a nonzero diagonal");
        Ok(DVector::from_fn(queries.nrows(), |i, _| {
            w.column(i).norm_squared().max(0.0)
        }))
    }

    /// Law of the updated predictive mean at `query` when the batch responses are
    /// drawn from the current predictive observation process: returns
    /// `(m_N(θ), s²_N(θ) − s²_{N+B}(θ))`.
    pub fn updated_mean_distribution(&self, batch: &DMatrix<f64>, query: &[f64]) -> Result<(f64, f64)> {
        let q = DMatrix::from_row_slice(1, query.len(), query);
        let (m, _) = self.predict_marginal(&q)?;
        let red = self.variance_reduction(batch, &q)?;
        Ok((m[0], red[0]))
    }

    /// Sampler for the joint latent predictive distribution at `points`.
    pub fn marginal_sampler(&self, points: &DMatrix<f64>) -> Result<MarginalSampler> {
        let pred = self.predict(points, false)?;
        let (chol, _) = escalating_cholesky(
            &pred.cov,
            super::kernel::BASE_RELATIVE_JITTER * self.kernel.signal_variance(),
            "predictive covariance",
        )?;
        Ok(MarginalSampler { mean: pred.mean, chol })
    }

    /// `n_draws` joint draws (rows) from the latent predictive distribution at `points`.
    pub fn sample_marginal<R: Rng + ?Sized>(
        &self,
        points: &DMatrix<f64>,
        n_draws: usize,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        let sampler = self.marginal_sampler(points)?;
        let mut out = DMatrix::zeros(n_draws, points.nrows());
        for k in 0..n_draws {
            let draw = sampler.draw(rng);
            out.row_mut(k).copy_from(&draw.transpose());
        }
        Ok(out)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.n_design() as f64;
        let residual = &self.responses - self.mean.eval(&self.inputs);
        let log_det: f64 = self.chol.diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * residual.dot(&self.alpha) - log_det - 0.5 * n * LN_2PI
    }

    /// Exact leave-one-out predictive moments from the full factorization.
    pub fn loo_diagnostics(&self) -> Result<Vec<LooPoint>> {
        let n = self.n_design();
        if n < 2 {
            return Err(Error::input(
                "leave-one-out diagnostics need at least two design points",
            ));
        }
        let identity = DMatrix::<f64>::identity(n, n);
        let linv = self
            .chol
            .solve_lower_triangular(&identity)
            .expect("cholesky factor has a nonzero diagonal");
        let kinv_diag: Vec<f64> = (0..n).map(|i| linv.column(i).norm_squared()).collect();
        Ok((0..n)
            .map(|i| {
                let loo_mean = self.responses[i] - self.alpha[i] / kinv_diag[i];
                let loo_variance = (1.0 / kinv_diag[i] - self.noise_variance - self.jitter).max(0.0);
                let pred_var = loo_variance + self.noise_variance;
                let r = self.responses[i] - loo_mean;
                LooPoint {
                    loo_mean,
                    loo_variance,
                    standardized_residual: r / pred_var.sqrt(),
                    log_score: -0.5 * (LN_2PI + pred_var.ln() + r * r / pred_var),
                }
            })
            .collect())
    }
}

/// Cached mean and Cholesky factor for repeated joint draws.
#[derive(Debug, Clone)]
pub struct MarginalSampler {
    pub mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl MarginalSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol * z
    }
}
