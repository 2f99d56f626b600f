use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use surro::active::{acq_ecu_var_ldens, current_integrated_variance, RhoMeasure, TemperSchedule};
use surro::estimators::{PointwiseEstimator, SurrogatePosterior};
use surro::gp::{GpEmulator, Kernel, MeanFunction};
use surro::grid::Grid;
use surro::numeric::rng_stream;
use surro::problems::builtin;
use surro::samplers::reflect;

/// Design on [-3, 3] with points at least `gap` apart.
fn design() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 2..8).prop_map(|mut xs| {
        xs.sort_by(f64::total_cmp);
        let mut out: Vec<f64> = Vec::new();
        for x in xs {
            if out.last().is_none_or(|l| x - l > 0.3) {
                out.push(x);
            }
        }
        out
    })
}

fn emulator(xs: &[f64], ls: f64, sv: f64, noise: f64) -> GpEmulator {
    let x = DMatrix::from_row_slice(xs.len(), 1, xs);
    let y = DVector::from_fn(xs.len(), |i, _| -2.0 * xs[i] * xs[i] + xs[i].sin());
    GpEmulator::fit(
        x,
        y,
        Kernel::squared_exponential(vec![ls], sv).unwrap(),
        MeanFunction::Constant { value: -3.0 },
        noise,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn predictive_variance_is_bounded(xs in design(), ls in 0.3f64..2.0, sv in 0.1f64..10.0, q in -4.0f64..4.0) {
        let gp = emulator(&xs, ls, sv, 0.0);
        let (_, v) = gp.predict_point(&[q]).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!(v <= sv * (1.0 + 1e-9));
    }

    #[test]
    fn conditioning_never_increases_variance(xs in design(), ls in 0.3f64..2.0, b in -3.0f64..3.0, q in -3.0f64..3.0) {
        let gp = emulator(&xs, ls, 2.0, 0.01);
        let before = gp.predict_point(&[q]).unwrap().1;
        let after = gp.conditional_variance(&DMatrix::from_row_slice(1, 1, &[b]), &DMatrix::from_row_slice(1, 1, &[q])).unwrap()[0];
        prop_assert!(after <= before + 1e-12);
        prop_assert!(after >= 0.0);
    }

    #[test]
    fn update_matches_refit(xs in design(), ls in 0.4f64..2.0, extra in -3.0f64..3.0) {
        prop_assume!(xs.iter().all(|x| (x - extra).abs() > 0.3));
        let gp = emulator(&xs, ls, 1.5, 0.0);
        let ynew = -2.0 * extra * extra + extra.sin();
        let up = gp.update(&DMatrix::from_row_slice(1, 1, &[extra]), &DVector::from_element(1, ynew)).unwrap();
        let mut all = xs.clone();
        all.push(extra);
        let re = emulator(&all, ls, 1.5, 0.0);
        let probe = DMatrix::from_row_slice(3, 1, &[-2.5, 0.1, 2.2]);
        let (mu, vu) = up.predict_marginal(&probe).unwrap();
        let (mr, vr) = re.predict_marginal(&probe).unwrap();
        prop_assert!((&mu - &mr).amax() <= 1e-8 * (1.0 + mr.amax()));
        prop_assert!((&vu - &vr).amax() <= 1e-8);
    }

    #[test]
    fn estimator_ordering(xs in design(), ls in 0.3f64..2.0, sv in 0.1f64..5.0, q in -3.0f64..3.0) {
        let sp = SurrogatePosterior::new(vec![emulator(&xs, ls, sv, 0.0)], builtin("bimodal").unwrap()).unwrap();
        let pt = DMatrix::from_row_slice(1, 1, &[q]);
        let at = |k| sp.log_density(k, &pt).unwrap()[0];
        let plug = at(PointwiseEstimator::PlugInMean);
        let eup = at(PointwiseEstimator::Eup);
        let q25 = at(PointwiseEstimator::Quantile { alpha: 0.25 });
        let q75 = at(PointwiseEstimator::Quantile { alpha: 0.75 });
        let mode = at(PointwiseEstimator::MarginalMode);
        prop_assert!(eup >= plug);
        prop_assert!(q25 <= plug && plug <= q75);
        prop_assert!(mode <= plug);
    }

    #[test]
    fn ecu_never_exceeds_current_variance(xs in design(), ls in 0.4f64..2.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let sp = SurrogatePosterior::new(vec![emulator(&xs, ls, 1.0, 0.0)], builtin("bimodal").unwrap()).unwrap();
        let rho = RhoMeasure::PriorSamples { count: 32 }.materialize(&sp, &mut rng_stream(seed, 0)).unwrap();
        let now = current_integrated_variance(&sp, &rho).unwrap();
        let ecu = acq_ecu_var_ldens(&sp, &DMatrix::from_row_slice(1, 1, &[b]), &rho).unwrap().value;
        prop_assert!(ecu <= now * (1.0 + 1e-9) + 1e-300);
        prop_assert!(ecu >= 0.0);
    }

    #[test]
    fn total_variation_is_a_bounded_metric(a in prop::collection::vec(0.0f64..1.0, 64), b in prop::collection::vec(0.0f64..1.0, 64)) {
        prop_assume!(a.iter().sum::<f64>() > 1e-3 && b.iter().sum::<f64>() > 1e-3);
        let g = Grid::uniform(&[0.0], &[1.0], 64).unwrap();
        let norm = |v: &[f64]| { let z = g.integrate(v); v.iter().map(|x| x / z).collect::<Vec<_>>() };
        let (p, q) = (norm(&a), norm(&b));
        let tv = g.total_variation(&p, &q);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&tv));
        prop_assert!((tv - g.total_variation(&q, &p)).abs() < 1e-15);
        prop_assert!(g.total_variation(&p, &p) == 0.0);
    }

    #[test]
    fn reflection_stays_in_bounds(x in -100.0f64..100.0, lo in -5.0f64..0.0, w in 0.1f64..5.0) {
        let y = reflect(x, lo, lo + w);
        prop_assert!(y >= lo && y <= lo + w);
    }

    #[test]
    fn quadratic_schedule_ends_at_one(t in 1usize..30) {
        let s = TemperSchedule::quadratic(t).unwrap();
        prop_assert_eq!(s.beta(t), 1.0);
        let y = DVector::from_vec(vec![-3.5, 0.25, -1e3]);
        prop_assert_eq!(s.rescale(t, &y), y);
        prop_assert!(s.betas().windows(2).all(|w| w[1] > w[0]));
    }
}
