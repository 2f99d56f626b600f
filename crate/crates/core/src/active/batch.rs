use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::acquisition::{evaluate_acquisition, AcquisitionKind, RhoPoints};
use crate::error::{Error, Result};
use crate::estimators::{PosteriorEstimate, SurrogatePosterior};
use crate::gp::GpEmulator;
use crate::numeric::SimRng;
use crate::problems::Prior;
use crate::samplers::reflect;

/// How a batch of `B` points is assembled from a candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchStrategy {
    /// Exact argmin for `B = 1`; Kriging-Believer greedy otherwise.
    ExhaustiveCandidates {
        candidates: usize,
    },
    GreedyKrigingBeliever,
    GreedyConstantLiar {
        value: f64,
    },
    /// The candidates are already draws from the sampling distribution; take the first `B`.
    DirectSampling,
}

impl Default for BatchStrategy {
    fn default() -> Self {
        BatchStrategy::ExhaustiveCandidates { candidates: 256 }
    }
}

/// Selected batch with the acquisition value of each point at the time it was chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSelection {
    pub points: DMatrix<f64>,
    pub candidate_indices: Vec<usize>,
    pub acq_values: Vec<f64>,
}

fn row(m: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    m.rows(i, 1).into_owned()
}

/// Conditions every emulator on `x` with the given pseudo-responses (one per output).
fn impute(sp: &SurrogatePosterior, x: &DMatrix<f64>, values: &[f64]) -> Result<SurrogatePosterior> {
    let gps = sp
        .emulators()
        .iter()
        .zip(values)
        .map(|(gp, v)| gp.update(x, &DVector::from_element(1, *v)))
        .collect::<Result<Vec<GpEmulator>>>()?;
    SurrogatePosterior::new(gps, sp.problem().clone())?
        .with_variance_adjustment(sp.variance_scale(), sp.variance_offset())
}

/// Chooses `b` points from `candidates` (rows) by minimizing the criterion.
/// Ties, including several `−∞` values, go to the lowest candidate index.
pub fn optimize_batch(
    kind: AcquisitionKind,
    sp: &SurrogatePosterior,
    b: usize,
    strategy: BatchStrategy,
    candidates: &DMatrix<f64>,
    rho: &RhoPoints,
) -> Result<BatchSelection> {
    if b == 0 {
        return Err(Error::input("batch size must be positive"));
    }
    if candidates.nrows() < b {
        return Err(Error::input(format!(
            "{} candidates cannot fill a batch of {b}",
            candidates.nrows()
        )));
    }
    if candidates.ncols() != sp.dim() {
        return Err(Error::input("candidate dimension differs from the problem"));
    }
    if let BatchStrategy::ExhaustiveCandidates { candidates: n } = strategy {
        if n < b {
            return Err(Error::input("candidate set size must be at least the batch size"));
        }
    }
    if matches!(strategy, BatchStrategy::DirectSampling) || kind.is_sampling() {
        let idx: Vec<usize> = (0..b).collect();
        return Ok(BatchSelection {
            points: candidates.rows(0, b).into_owned(),
            candidate_indices: idx,
            acq_values: vec![f64::NAN; b],
        });
    }

    let mut current = sp.clone();
    let mut remaining: Vec<usize> = (0..candidates.nrows()).collect();
    let mut chosen = Vec::with_capacity(b);
    let mut values = Vec::with_capacity(b);
    for step in 0..b {
        let scores: Vec<f64> = remaining
            .par_iter()
            .map(|&i| {
                evaluate_acquisition(kind, &current, &row(candidates, i), rho)
                    .map(|v| if v.value.is_nan() { f64::INFINITY } else { v.value })
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        let (pos, best) = scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(p, v)| (p, *v))
            .expect("candidate set is nonempty");
        let idx = remaining.remove(pos);
        chosen.push(idx);
        values.push(best);
        if step + 1 < b {
            let x = row(candidates, idx);
            let pseudo: Vec<f64> = match strategy {
                BatchStrategy::GreedyConstantLiar { value } => vec![value; current.emulators().len()],
                _ => current.predict(&x)?.mean.row(0).iter().cloned().collect(),
            };
            match impute(&current, &x, &pseudo) {
                Ok(next) => current = next,
                Err(Error::DegenerateUpdate(msg)) => log::warn!("pseudo-observation skipped: {msg}"),
                Err(e) => return Err(e),
            }
        }
    }
    let points = DMatrix::from_fn(b, candidates.ncols(), |i, j| candidates[(chosen[i], j)]);
    Ok(BatchSelection {
        points,
        candidate_indices: chosen,
        acq_values: values,
    })
}

/// Draws `b` points independently from `w·π̂ + (1−w)·π_0`. Points that
/// coincide with a noiseless design point are moved by `1e-6` lengthscales.
pub fn sample_batch(
    estimate: Option<&PosteriorEstimate>,
    prior: &Prior,
    b: usize,
    mix_weight: f64,
    design: Option<&GpEmulator>,
    rng: &mut SimRng,
) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&mix_weight) {
        return Err(Error::input("mix_weight must lie in [0, 1]"));
    }
    let sampler = match estimate {
        Some(e) if mix_weight > 0.0 => Some(e.sampler()?),
        None if mix_weight > 0.0 => return Err(Error::input("a posterior estimate is needed when mix_weight > 0")),
        _ => None,
    };
    let dim = prior.dim();
    let (lo, hi) = prior.bounds();
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(b);
    for _ in 0..b {
        let u: f64 = rng.random();
        let mut x = match &sampler {
            Some(s) if u < mix_weight => s.draw(rng),
            _ => prior.sample(rng),
        };
        if x.len() != dim {
            return Err(Error::input("estimate dimension differs from the prior"));
        }
        if let Some(gp) = design.filter(|g| g.noise_variance() == 0.0) {
            let inputs = gp.inputs();
            let ls = gp.kernel().lengthscales();
            let clashes = |x: &[f64], pts: &[Vec<f64>]| {
                (0..inputs.nrows()).any(|i| inputs.row(i).iter().zip(x).all(|(a, b)| a == b))
                    || pts.iter().any(|p| p.as_slice() == x)
            };
            let mut sign = 1.0;
            while clashes(&x, &points) {
                for d in 0..dim {
                    x[d] = reflect(x[d] + sign * 1e-6 * ls[d], lo[d], hi[d]);
                }
                sign *= -2.0;
            }
        }
        points.push(x);
    }
    Ok(DMatrix::from_fn(b, dim, |i, j| points[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active::acquisition::RhoPoints;
    use crate::estimators::{estimate_plug_in, EstimationMode};
    use crate::gp::{Kernel, MeanFunction};
    use crate::grid::Grid;
    use crate::numeric::rng_stream;
    use crate::problems::builtin;

    fn sp() -> SurrogatePosterior {
        let x = DMatrix::from_row_slice(4, 1, &[-2.0, -0.5, 0.7, 2.2]);
        let y = DVector::from_vec(vec![-6.0, -2.0, -0.3, -4.0]);
        let k = Kernel::squared_exponential(vec![0.6], 2.0).unwrap();
        let gp = GpEmulator::fit(x, y, k, MeanFunction::Constant { value: -3.0 }, 0.0).unwrap();
        SurrogatePosterior::new(vec![gp], builtin("bimodal").unwrap()).unwrap()
    }

    fn rho(sp: &SurrogatePosterior) -> RhoPoints {
        RhoPoints::uniform(DMatrix::from_fn(32, 1, |i, _| -3.0 + 6.0 * i as f64 / 31.0), sp).unwrap()
    }

    #[test]
    fn greedy_with_one_point_is_exhaustive_argmin() {
        let sp = sp();
        let rho = rho(&sp);
        let cands = DMatrix::from_fn(50, 1, |i, _| -2.9 + 0.118 * i as f64);
        for kind in [AcquisitionKind::MaxVarLdens, AcquisitionKind::EcuVarLdens] {
            let sel = optimize_batch(kind, &sp, 1, BatchStrategy::GreedyKrigingBeliever, &cands, &rho).unwrap();
            let all: Vec<f64> = (0..50)
                .map(|i| evaluate_acquisition(kind, &sp, &row(&cands, i), &rho).unwrap().value)
                .collect();
            let best = (0..50).min_by(|&a, &b| all[a].total_cmp(&all[b])).unwrap();
            assert_eq!(sel.candidate_indices, vec![best]);
            let ex = optimize_batch(kind, &sp, 1, BatchStrategy::default(), &cands, &rho).unwrap();
            assert_eq!(ex.candidate_indices, sel.candidate_indices);
        }
    }

    #[test]
    fn kriging_believer_does_not_clump() {
        let sp = sp();
        let rho = rho(&sp);
        for seed in 0..50 {
            let mut rng = rng_stream(seed, 0);
            let cands = DMatrix::from_fn(64, 1, |_, _| rng.random_range(-3.0..3.0));
            let sel = optimize_batch(
                AcquisitionKind::MaxVarLdens,
                &sp,
                2,
                BatchStrategy::GreedyKrigingBeliever,
                &cands,
                &rho,
            )
            .unwrap();
            let gap = (sel.points[(0, 0)] - sel.points[(1, 0)]).abs();
            assert!(gap >= 0.01 * 0.6, "seed {seed}: gap {gap}");
        }
    }

    #[test]
    fn constant_liar_follows_its_own_imputation() {
        let sp = sp();
        let rho = rho(&sp);
        let cands = DMatrix::from_fn(40, 1, |i, _| -2.95 + 0.15 * i as f64);
        for c in [-0.3, -6.0] {
            let sel = optimize_batch(
                AcquisitionKind::EcuVarLdens,
                &sp,
                2,
                BatchStrategy::GreedyConstantLiar { value: c },
                &cands,
                &rho,
            )
            .unwrap();
            let first = sel.candidate_indices[0];
            let x = row(&cands, first);
            let next = impute(&sp, &x, &[c]).unwrap();
            let second = (0..40)
                .filter(|i| *i != first)
                .min_by(|&a, &b| {
                    let va = evaluate_acquisition(AcquisitionKind::EcuVarLdens, &next, &row(&cands, a), &rho).unwrap();
                    let vb = evaluate_acquisition(AcquisitionKind::EcuVarLdens, &next, &row(&cands, b), &rho).unwrap();
                    va.value.total_cmp(&vb.value)
                })
                .unwrap();
            assert_eq!(sel.candidate_indices[1], second);
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let sp = sp();
        let rho = rho(&sp);
        let cands = DMatrix::from_row_slice(3, 1, &[2.9, 2.9, 2.9]);
        let sel = optimize_batch(
            AcquisitionKind::MaxVarLdens,
            &sp,
            1,
            BatchStrategy::default(),
            &cands,
            &rho,
        )
        .unwrap();
        assert_eq!(sel.candidate_indices, vec![0]);
    }

    #[test]
    fn too_few_candidates_rejected() {
        let sp = sp();
        let rho = rho(&sp);
        let cands = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert!(optimize_batch(
            AcquisitionKind::MaxVarLdens,
            &sp,
            2,
            BatchStrategy::default(),
            &cands,
            &rho
        )
        .is_err());
    }

    fn ks_uniform(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, x)| {
                let f = cdf(*x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_weight_gives_prior_draws() {
        let prior = builtin("bimodal").unwrap().prior;
        let mut rng = rng_stream(9, 0);
        let pts = sample_batch(None, &prior, 1000, 0.0, None, &mut rng).unwrap();
        let mut xs: Vec<f64> = pts.column(0).iter().cloned().collect();
        assert!(ks_uniform(&mut xs, |x| prior.marginal_cdf(0, x)) <= 0.05);
    }

    #[test]
    fn half_mixture_matches_analytic_cdf() {
        let problem = builtin("conjugate").unwrap();
        let x = DMatrix::from_fn(30, 1, |i, _| -5.0 + 10.0 * i as f64 / 29.0);
        let y = DVector::from_fn(30, |i, _| problem.log_likelihood(&[x[(i, 0)]]).unwrap());
        let k = Kernel::squared_exponential(vec![1.0], 100.0).unwrap();
        let gp = GpEmulator::fit(x, y, k, MeanFunction::Zero, 0.0).unwrap();
        let sp = SurrogatePosterior::new(vec![gp], problem.clone())
            .unwrap()
            .with_variance_adjustment(0.0, 0.0)
            .unwrap();
        let grid = Grid::uniform(&[-5.0], &[5.0], 2001).unwrap();
        let est = estimate_plug_in(&sp, &EstimationMode::Grid(grid)).unwrap();
        let (pm, pv) = crate::problems::conjugate_posterior_moments();
        let post = statrs::distribution::Normal::new(pm, pv.sqrt()).unwrap();
        let mut rng = rng_stream(4, 0);
        let pts = sample_batch(Some(&est), &problem.prior, 10_000, 0.5, None, &mut rng).unwrap();
        let mut xs: Vec<f64> = pts.column(0).iter().cloned().collect();
        use statrs::distribution::ContinuousCDF;
        let d = ks_uniform(&mut xs, |x| 0.5 * post.cdf(x) + 0.5 * problem.prior.marginal_cdf(0, x));
        assert!(d <= 0.03, "KS {d}");
    }

    #[test]
    fn duplicates_of_design_are_jittered() {
        let x = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 1.0]);
        let k = Kernel::squared_exponential(vec![0.5], 1.0).unwrap();
        let gp = GpEmulator::fit(x, DVector::from_vec(vec![0.0, 1.0, 0.0]), k, MeanFunction::Zero, 0.0).unwrap();
        let prior = Prior::uniform(vec![-1.0], vec![1.0]).unwrap();
        let est = PosteriorEstimate {
            kind: crate::estimators::EstimateKind::GridTruth,
            repr: crate::estimators::EstimateRepr::Samples {
                samples: vec![vec![0.0]],
                trajectory: vec![0],
            },
            seed: None,
        };
        let mut rng = rng_stream(1, 0);
        let pts = sample_batch(Some(&est), &prior, 2, 1.0, Some(&gp), &mut rng).unwrap();
        assert!(pts[(0, 0)] != 0.0 && (pts[(0, 0)]).abs() < 1e-5);
        assert!(pts[(1, 0)] != pts[(0, 0)]);
    }

    #[test]
    fn empty_reservoir_is_an_error() {
        let est = PosteriorEstimate {
            kind: crate::estimators::EstimateKind::GridTruth,
            repr: crate::estimators::EstimateRepr::Samples {
                samples: vec![],
                trajectory: vec![],
            },
            seed: None,
        };
        let prior = builtin("bimodal").unwrap().prior;
        let mut rng = rng_stream(1, 0);
        assert!(matches!(
            sample_batch(Some(&est), &prior, 2, 0.5, None, &mut rng),
            Err(Error::EmptyReservoir)
        ));
    }
}
