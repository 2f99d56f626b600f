//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//! Run with `cargo test --test acceptance`.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use surro::active::{prior_design_tv, run_active_learning, AcquisitionKind, ActiveLearningConfig, TemperingConfig};
use surro::cli::{fit_surrogate, ExperimentConfig};
use surro::estimators::{estimate_ep_grid, estimate_pointwise, EstimationMode, PointwiseEstimator, SurrogatePosterior};
use surro::gp::{GpEmulator, Kernel, MeanFunction};
use surro::grid::Grid;
use surro::problems::{builtin, pseudo_marginal_loglik_estimate, SimulationLedger, TargetKind};
use surro::samplers::{effective_sample_size, pm_mh, MhConfig};
use surro::verify::{bimodal_hole_fixture, check_ep_mixture, run_verification, VerifyOptions, EP_TV_TOLERANCE};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn se_kernel(a: &[f64], b: &[f64], ls: &[f64], sv: f64) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    sv * (-0.5 * r2).exp()
}

fn gp_correctness() -> surro::Result<Outcome> {
    let ls = [0.8, 1.3];
    let sv = 1.0;
    let n = 12;
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            surro::numeric::halton(i as u64 + 1, 2)
                .iter()
                .map(|u| 6.0 * u - 3.0)
                .collect()
        })
        .collect();
    let f = |x: &[f64]| (x[0]).sin() * (0.5 * x[1]).cos() + 0.1 * x[0] * x[1];
    let x = DMatrix::from_fn(n, 2, |i, j| xs[i][j]);
    let y = DVector::from_fn(n, |i, _| f(&xs[i]));
    let kernel = Kernel::squared_exponential(ls.to_vec(), sv)?;
    let gp = GpEmulator::fit(x.clone(), y.clone(), kernel.clone(), MeanFunction::Zero, 0.0)?;

    let (m, v) = gp.predict_marginal(&x)?;
    let interp_mean = (0..n).map(|i| (m[i] - y[i]).abs()).fold(0.0, f64::max);
    let interp_var = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));

    // dense-inverse oracle with the emulator's diagonal jitter
    let jit = gp.jitter();
    let kmat = DMatrix::from_fn(n, n, |i, j| {
        se_kernel(&xs[i], &xs[j], &ls, sv) + if i == j { jit } else { 0.0 }
    });
    let kinv = kmat.try_inverse().expect("invertible");
    let tests: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            surro::numeric::halton(i as u64 + 101, 2)
                .iter()
                .map(|u| 7.0 * u - 3.5)
                .collect()
        })
        .collect();
    let xt = DMatrix::from_fn(tests.len(), 2, |i, j| tests[i][j]);
    let (mt, vt) = gp.predict_marginal(&xt)?;
    let mut oracle_err = 0.0f64;
    for (i, t) in tests.iter().enumerate() {
        let k = DVector::from_fn(n, |j, _| se_kernel(t, &xs[j], &ls, sv));
        let om = (k.transpose() * &kinv * &y)[0];
        let ov = sv - (k.transpose() * &kinv * &k)[0];
        oracle_err = oracle_err.max((om - mt[i]).abs()).max((ov - vt[i]).abs());
    }

    let extra = 4;
    let base = GpEmulator::fit(
        x.rows(0, n - extra).into_owned(),
        y.rows(0, n - extra).into_owned(),
        kernel.clone(),
        MeanFunction::Zero,
        0.0,
    )?;
    let updated = base.update(
        &x.rows(n - extra, extra).into_owned(),
        &y.rows(n - extra, extra).into_owned(),
    )?;
    let (mu, vu) = updated.predict_marginal(&xt)?;
    let update_err = (&mu - &mt).amax().max((&vu - &vt).amax());

    let tol = 1e-8;
    Ok(outcome(
        interp_mean <= tol && interp_var <= tol && oracle_err <= tol && update_err <= tol,
        format!(
            "interp mean {interp_mean:.1e}, interp var {interp_var:.1e}, dense oracle {oracle_err:.1e}, update/refit {update_err:.1e} (tol {tol:.0e})"
        ),
    ))
}

fn verification_battery() -> surro::Result<Outcome> {
    let start = Instant::now();
    let opts = VerifyOptions::default();
    let report = run_verification(&opts)?;
    let secs = start.elapsed().as_secs_f64();
    let items: Vec<String> = report
        .items
        .iter()
        .map(|i| format!("{} {:.2}{}", i.name, i.max_deviation, if i.passed { "" } else { "!" }))
        .collect();
    Ok(outcome(
        report.passed && opts.instances >= 20 && opts.z_tolerance == 3.0 && secs <= 300.0,
        format!(
            "{} instances; {}; {secs:.0}s (limit 300s)",
            opts.instances,
            items.join(", ")
        ),
    ))
}

fn zero_variance_surrogate() -> surro::Result<SurrogatePosterior> {
    let mut c = ExperimentConfig::builtin("bimodal", 13);
    c.emulator.initial_design = 8;
    Ok(fit_surrogate(&c)?.surrogate)
}

fn estimator_coincidence() -> surro::Result<Outcome> {
    let sp = zero_variance_surrogate()?;
    let flat = sp.clone().with_variance_adjustment(0.0, 0.0)?;
    let (lo, hi) = sp.problem().prior.bounds();
    let grid = Grid::uniform(lo, hi, 512)?;
    let mode = EstimationMode::Grid(grid.clone());
    let density = |s: &SurrogatePosterior, k| -> surro::Result<Vec<f64>> {
        Ok(estimate_pointwise(s, k, &mode)?
            .grid_density()
            .expect("grid")
            .1
            .to_vec())
    };
    let plug = density(&flat, PointwiseEstimator::PlugInMean)?;
    let mut worst = 0.0f64;
    for k in [
        PointwiseEstimator::Eup,
        PointwiseEstimator::Quantile { alpha: 0.5 },
        PointwiseEstimator::Quantile { alpha: 0.9 },
        PointwiseEstimator::MarginalMode,
    ] {
        worst = worst.max(grid.total_variation(&density(&flat, k)?, &plug));
    }
    let ep = estimate_ep_grid(&flat, &grid, 16, 1)?;
    worst = worst.max(grid.total_variation(ep.grid_density().expect("grid").1, &plug));

    // identities at the unadjusted (nonzero) variance
    let nodes = grid.nodes();
    let lp = sp.log_density(PointwiseEstimator::PlugInMean, &nodes)?;
    let lq = sp.log_density(PointwiseEstimator::Quantile { alpha: 0.5 }, &nodes)?;
    let le = sp.log_density(PointwiseEstimator::Eup, &nodes)?;
    let pred = sp.predict(&nodes)?;
    let median_exact = lp == lq;
    let mut eup_gap = 0.0f64;
    for i in 0..nodes.nrows() {
        let half_s2 = 0.5 * pred.var[(i, 0)];
        eup_gap = eup_gap.max(((le[i] - lp[i]) - half_s2).abs() / (1.0 + half_s2));
    }
    Ok(outcome(
        worst <= 1e-6 && median_exact && eup_gap <= 1e-10,
        format!("max TV at s2=0 {worst:.1e} (tol 1e-6); q0.5==plug-in bitwise: {median_exact}; |EUP-plug-in-s2/2| {eup_gap:.1e}"),
    ))
}

fn ep_fidelity() -> surro::Result<Outcome> {
    let start = Instant::now();
    let item = check_ep_mixture(0)?;
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        item.passed && secs <= 120.0,
        format!(
            "binned TV {:.4} (tol {EP_TV_TOLERANCE}); {secs:.1}s (limit 120s)",
            item.max_deviation
        ),
    ))
}

/// Local maxima exceeding `frac` of the global maximum, each dominating a ±`w`-node window.
fn peaks(d: &[f64], frac: f64, w: usize) -> Vec<usize> {
    let top = d.iter().cloned().fold(0.0, f64::max);
    (0..d.len())
        .filter(|&i| {
            let lo = i.saturating_sub(w);
            let hi = (i + w + 1).min(d.len());
            d[i] >= frac * top && d[lo..hi].iter().all(|v| *v <= d[i]) && d[i] > 0.0
        })
        .collect()
}

fn pathology() -> surro::Result<Outcome> {
    let sp = bimodal_hole_fixture()?;
    let grid = Grid::uniform(&[-3.0], &[3.0], 512)?;
    let nodes = grid.nodes();
    let eup = estimate_pointwise(&sp, PointwiseEstimator::Eup, &EstimationMode::Grid(grid.clone()))?;
    let eup_d = eup.grid_density().expect("grid").1;
    let pred = sp.predict(&nodes)?;
    let score: Vec<f64> = (0..grid.len())
        .map(|i| sp.problem().log_prior(&grid.node(i)) + pred.mean[(i, 0)] + 0.5 * pred.var[(i, 0)])
        .collect();
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).expect("nonempty");
    let eup_mode = nodes[(argmax(eup_d), 0)];
    let score_mode = nodes[(argmax(&score), 0)];
    let in_hole = eup_mode.abs() < 1.15;

    let ep = estimate_ep_grid(&sp, &grid, 512, 7)?;
    let ep_d = ep.grid_density().expect("grid").1;
    let pk: Vec<f64> = peaks(ep_d, 0.1, 8).into_iter().map(|i| nodes[(i, 0)]).collect();
    let near = |t: f64| pk.iter().any(|p| (p - t).abs() < 0.35);
    let both = near(2f64.sqrt()) && near(-(2f64.sqrt()));
    Ok(outcome(
        eup_mode == score_mode && in_hole && pk.len() >= 2 && both,
        format!("EUP mode {eup_mode:.3} vs argmax(m+s2/2) {score_mode:.3}; EP peaks {pk:.3?}"),
    ))
}

fn prior_reversion() -> surro::Result<Outcome> {
    let mut c = ExperimentConfig::builtin("conjugate", 5);
    c.target = Some(TargetKind::ForwardModel);
    c.emulator.initial_design = 6;
    let fitted = fit_surrogate(&c)?;
    let sigma_norm = fitted.problem.noise.cov().symmetric_eigenvalues().amax();
    let sp = fitted.surrogate.with_variance_adjustment(1.0, 1e6 * sigma_norm)?;
    let (lo, hi) = sp.problem().prior.bounds();
    let grid = Grid::uniform(lo, hi, 512)?;
    let eup = estimate_pointwise(&sp, PointwiseEstimator::Eup, &EstimationMode::Grid(grid.clone()))?;
    let prior: Vec<f64> = (0..grid.len())
        .map(|i| sp.problem().prior.density(&grid.node(i)))
        .collect();
    let z = grid.integrate(&prior);
    let prior: Vec<f64> = prior.iter().map(|p| p / z).collect();
    let tv = grid.total_variation(eup.grid_density().expect("grid").1, &prior);
    Ok(outcome(
        tv <= 0.02,
        format!("TV(EUP, prior) {tv:.2e} at s2 + 1e6*|Sigma| (tol 0.02)"),
    ))
}

fn pm_exactness() -> surro::Result<Outcome> {
    let p = builtin("pm_latent")?;
    let latent = p.latent.clone().expect("latent model");
    let replicates = match p.target {
        TargetKind::PseudoMarginal { replicates } => replicates,
        _ => unreachable!(),
    };
    let (mut sum, mut var_of_sum) = (0.0, 0.0);
    let seeds = 10;
    let steps = 400_000;
    let mut total = 0usize;
    for seed in 0..seeds {
        let ledger = SimulationLedger::new();
        let run = pm_mh(
            |t, rng| {
                Ok(pseudo_marginal_loglik_estimate(t, &latent, &p.observation, replicates, &ledger, rng)?.scalar())
            },
            &p.prior,
            &MhConfig::with_steps(steps, seed),
        )?;
        let xs = run.chain.coordinate(0);
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        sum += m * n;
        var_of_sum += v / effective_sample_size(&xs) * n * n;
        total += xs.len();
    }
    let pooled = sum / total as f64;
    let se = var_of_sum.sqrt() / total as f64;

    // marginal likelihood y | θ ~ N(θ, 2) under the truncated prior, by quadrature
    let (lo, hi) = p.prior.bounds();
    let grid = Grid::uniform(lo, hi, 20_001)?;
    let y = p.observation[0];
    let w: Vec<f64> = (0..grid.len())
        .map(|i| {
            let t = grid.node(i)[0];
            p.prior.density(&[t]) * (-(y - t).powi(2) / 4.0).exp()
        })
        .collect();
    let tw: Vec<f64> = (0..grid.len()).map(|i| grid.node(i)[0] * w[i]).collect();
    let exact = grid.integrate(&tw) / grid.integrate(&w);
    let z = (pooled - exact) / se;
    Ok(outcome(
        z.abs() <= 3.0,
        format!("pooled mean {pooled:.5} vs exact {exact:.5}, SE {se:.1e}, z {z:+.2} over {seeds}x{steps} steps"),
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn active_vs_prior() -> surro::Result<Outcome> {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["conjugate", "bimodal"] {
        let p = builtin(name)?;
        let (mut act, mut pri) = (Vec::new(), Vec::new());
        for seed in 0..10 {
            let c = ActiveLearningConfig {
                initial_design: 4,
                rounds: 5,
                batch_size: 2,
                acquisition: AcquisitionKind::EcuVarLdens,
                seed,
                ..ActiveLearningConfig::default()
            };
            act.push(run_active_learning(&p, &c)?.final_tv().expect("1-D metric"));
            pri.push(prior_design_tv(&p, &c)?.expect("1-D metric"));
        }
        let (ma, mp) = (median(act), median(pri));
        ok &= ma < mp;
        parts.push(format!("{name}: median TV active {ma:.4} vs prior {mp:.4}"));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        ok && secs <= 600.0,
        format!("{}; {secs:.0}s", parts.join("; ")),
    ))
}

fn tempering_endpoint() -> surro::Result<Outcome> {
    let p = builtin("bimodal")?;
    let c = ActiveLearningConfig {
        rounds: 4,
        batch_size: 2,
        tempering: Some(TemperingConfig::Quadratic),
        seed: 3,
        ..ActiveLearningConfig::default()
    };
    let h = run_active_learning(&p, &c)?;
    let raw: Vec<f64> = h.responses().iter().map(|r| r[0]).collect();
    let mut ok = true;
    for r in &h.rounds {
        let fit = &r.acquisition_emulators[0].responses;
        let expected: Vec<f64> = raw[..fit.len()].iter().map(|y| y * r.beta).collect();
        ok &= *fit == expected;
    }
    let last = h.rounds.last().expect("rounds");
    let n = last.acquisition_emulators[0].responses.len();
    let endpoint = last.beta == 1.0 && last.acquisition_emulators[0].responses == raw[..n];
    Ok(outcome(
        ok && endpoint,
        format!(
            "betas {:?}; final-round target bitwise equal to untempered: {endpoint}; every round equals beta*loglik: {ok}",
            h.rounds.iter().map(|r| r.beta).collect::<Vec<_>>()
        ),
    ))
}

fn dir_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for e in fs::read_dir(dir).expect("readable dir").flatten() {
        let p = e.path();
        if p.is_dir() {
            dir_files(&p, out);
        } else if p.file_name().is_some_and(|n| n != "timing.json") {
            out.push(p);
        }
    }
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    dir_files(a, &mut fa);
    dir_files(b, &mut fb);
    fa.sort();
    fb.sort();
    fa.len() == fb.len()
        && !fa.is_empty()
        && fa
            .iter()
            .zip(&fb)
            .all(|(x, y)| x.strip_prefix(a).ok() == y.strip_prefix(b).ok() && fs::read(x).ok() == fs::read(y).ok())
}

fn cli_determinism() -> surro::Result<Outcome> {
    let bin = env!("CARGO_BIN_EXE_surro");
    let tmp = std::env::temp_dir().join(format!("surro-acceptance-{}", std::process::id()));
    fs::create_dir_all(&tmp)?;
    let cfg = tmp.join("config.json");
    fs::write(
        &cfg,
        r#"{"seed": 17, "problem": "bimodal",
            "emulator": {"initial_design": 6},
            "estimator": {"kind": {"kind": "ep", "trajectories": 64, "draws_per_trajectory": 20}, "mode": {"kind": "grid", "nodes": 256}},
            "active_learning": {"initial_design": 4, "rounds": 2, "batch_size": 2},
            "paired_seeds": 2}"#,
    )?;
    let runs: [(&str, Vec<&str>); 5] = [
        ("fit", vec!["--config"]),
        ("infer", vec!["--config"]),
        ("design", vec!["--config"]),
        ("oracle", vec!["--config"]),
        ("verify", vec!["--instances", "2", "--draws", "1000"]),
    ];
    let mut failures = Vec::new();
    for (cmd, flags) in &runs {
        let mut outs = Vec::new();
        for rep in 0..2 {
            let out = tmp.join(format!("{cmd}-{rep}"));
            let mut c = Command::new(bin);
            c.arg(cmd)
                .arg("--out")
                .arg(&out)
                .arg("--threads")
                .arg(if rep == 0 { "1" } else { "4" });
            for f in flags {
                c.arg(f);
                if *f == "--config" {
                    c.arg(&cfg);
                }
            }
            let status = c.output()?.status;
            if !status.success() {
                failures.push(format!("{cmd} exited {status}"));
            }
            outs.push(out);
        }
        if !same_tree(&outs[0], &outs[1]) {
            failures.push(format!("{cmd} differs"));
        }
    }
    let _ = fs::remove_dir_all(&tmp);
    Ok(outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "fit, infer, design, oracle, verify: artifacts byte-identical across reruns (1 vs 4 threads)".to_string()
        } else {
            failures.join(", ")
        },
    ))
}

fn main() {
    type Criterion = fn() -> surro::Result<Outcome>;
    let criteria: [(&str, Criterion); 10] = [
        ("gp_correctness", gp_correctness),
        ("verification_battery", verification_battery),
        ("estimator_coincidence", estimator_coincidence),
        ("ep_fidelity", ep_fidelity),
        ("eup_hole_vs_ep_bimodality", pathology),
        ("prior_reversion", prior_reversion),
        ("pseudo_marginal_exactness", pm_exactness),
        ("active_beats_prior_design", active_vs_prior),
        ("tempering_endpoint", tempering_endpoint),
        ("cli_determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let (passed, detail) = match f() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "{} {name:28} {detail} [{:.1}s]",
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
