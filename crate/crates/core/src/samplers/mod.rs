//! Random-walk Metropolis–Hastings on box-supported targets, pseudo-marginal
//! MH with estimate recycling, and chain diagnostics.

mod diagnostics;

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{rng_stream, SimRng};
use crate::problems::Prior;

pub use diagnostics::{chain_diagnostics, effective_sample_size, split_rhat, ChainDiagnostics};

const MAX_INIT_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MhConfig {
    pub n_steps: usize,
    /// Fraction of steps discarded as burn-in; the proposal scale adapts only there.
    pub burn_in: f64,
    /// Per-dimension proposal standard deviations; defaults to a tenth of the prior box width.
    pub initial_scale: Option<Vec<f64>>,
    pub adapt: bool,
    /// Defaults to 0.44 in one dimension and 0.234 otherwise.
    pub target_acceptance: Option<f64>,
    pub initial_state: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            n_steps: 10_000,
            burn_in: 0.25,
            initial_scale: None,
            adapt: true,
            target_acceptance: None,
            initial_state: None,
            seed: 0,
        }
    }
}

impl MhConfig {
    pub fn with_steps(n_steps: usize, seed: u64) -> Self {
        Self {
            n_steps,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self, prior: &Prior) -> Result<()> {
        if !(self.burn_in > 0.0 && self.burn_in < 1.0) {
            return Err(Error::input("burn-in fraction must lie in (0, 1)"));
        }
        if self.n_steps == 0 {
            return Err(Error::input("a chain needs at least one step"));
        }
        if let Some(s) = &self.initial_scale {
            if s.len() != prior.dim() || s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::input("proposal scales must be positive, one per dimension"));
            }
        }
        if let Some(x) = &self.initial_state {
            if !prior.contains(x) {
                return Err(Error::input("initial state lies outside the prior support"));
            }
        }
        Ok(())
    }

    pub fn burn_in_steps(&self) -> usize {
        ((self.n_steps as f64) * self.burn_in).floor() as usize
    }

    fn target(&self, dim: usize) -> f64 {
        self.target_acceptance.unwrap_or(if dim == 1 { 0.44 } else { 0.234 })
    }

    fn base_scale(&self, prior: &Prior) -> Vec<f64> {
        self.initial_scale
            .clone()
            .unwrap_or_else(|| prior.widths().iter().map(|w| 0.1 * w).collect())
    }
}

/// A full Markov chain including burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub states: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Global proposal-scale multiplier in force at each step.
    pub scale_history: Vec<f64>,
    pub burn_in: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map(Vec::len).unwrap_or(0)
    }

    /// States after burn-in.
    pub fn retained(&self) -> &[Vec<f64>] {
        &self.states[self.burn_in..]
    }

    /// Acceptance rate over the post-burn-in steps.
    pub fn acceptance_rate(&self) -> f64 {
        let kept = &self.accepted[self.burn_in..];
        kept.iter().filter(|a| **a).count() as f64 / kept.len().max(1) as f64
    }

    /// Post-burn-in trace of coordinate `d`.
    pub fn coordinate(&self, d: usize) -> Vec<f64> {
        self.retained().iter().map(|s| s[d]).collect()
    }

    /// CSV with columns `step,theta_0,...,log_density,accepted`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|d| format!("theta_{d}")).collect();
        writeln!(w, "step,{},log_density,accepted", header.join(","))?;
        for (i, s) in self.states.iter().enumerate() {
            let vals: Vec<String> = s.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(
                w,
                "{},{},{:.16e},{}",
                i,
                vals.join(","),
                self.log_density[i],
                u8::from(self.accepted[i])
            )?;
        }
        Ok(())
    }
}

/// Folds `x` back into `[lo, hi]` by mirror reflection.
pub fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let mut y = (x - lo) % (2.0 * w);
    if y < 0.0 {
        y += 2.0 * w;
    }
    if y > w {
        y = 2.0 * w - y;
    }
    lo + y
}

struct Proposal {
    base: Vec<f64>,
    log_lambda: f64,
    target: f64,
}

impl Proposal {
    fn draw(&self, current: &[f64], prior: &Prior, rng: &mut SimRng) -> Vec<f64> {
        let (lo, hi) = prior.bounds();
        let lambda = self.log_lambda.exp();
        current
            .iter()
            .enumerate()
            .map(|(d, x)| {
                let z: f64 = rng.sample(StandardNormal);
                reflect(x + lambda * self.base[d] * z, lo[d], hi[d])
            })
            .collect()
    }

    /// Robbins–Monro step on the log scale multiplier.
    fn adapt(&mut self, step: usize, accept_prob: f64) {
        let gain = (step as f64 + 1.0).powf(-0.6);
        // capped so a flat target cannot push proposals to widths where
        // reflection loses all precision
        self.log_lambda = (self.log_lambda + gain * (accept_prob - self.target)).clamp(-20.0, 10f64.ln());
    }
}

fn acceptance_probability(current: f64, proposed: f64) -> f64 {
    if proposed == f64::NEG_INFINITY {
        0.0
    } else {
        (proposed - current).exp().min(1.0)
    }
}

/// Generic MH loop. `eval` returns the log target at a proposed state and is
/// called once per proposal; the stored value at the current state is reused.
fn run_mh<F>(prior: &Prior, config: &MhConfig, chain_index: u64, mut eval: F) -> Result<Chain>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    run_mh_refreshing(prior, config, chain_index, |x, _| eval(x).map(|v| (v, None)))
}

/// MH loop whose evaluator sees the current state and may return a refreshed
/// log target for it, used when the target itself changes between steps.
pub(crate) fn run_mh_refreshing<F>(prior: &Prior, config: &MhConfig, chain_index: u64, mut eval: F) -> Result<Chain>
where
    F: FnMut(&[f64], Option<&[f64]>) -> Result<(f64, Option<f64>)>,
{
    config.validate(prior)?;
    let mut rng = rng_stream(config.seed, 2 * chain_index);
    let (mut current, mut current_ld) = match &config.initial_state {
        Some(x) => {
            let ld = eval(x, None)?.0;
            if !ld.is_finite() {
                return Err(Error::Initialization(
                    "log-density is not finite at the initial state".into(),
                ));
            }
            (x.clone(), ld)
        }
        None => {
            let mut found = None;
            for _ in 0..MAX_INIT_DRAWS {
                let x = prior.sample(&mut rng);
                let ld = eval(&x, None)?.0;
                if ld.is_finite() {
                    found = Some((x, ld));
                    break;
                }
            }
            found.ok_or_else(|| {
                Error::Initialization(format!("no finite log-density in {MAX_INIT_DRAWS} prior draws"))
            })?
        }
    };
    let mut proposal = Proposal {
        base: config.base_scale(prior),
        log_lambda: 0.0,
        target: config.target(prior.dim()),
    };
    let burn = config.burn_in_steps();
    let mut chain = Chain {
        states: Vec::with_capacity(config.n_steps),
        log_density: Vec::with_capacity(config.n_steps),
        accepted: Vec::with_capacity(config.n_steps),
        scale_history: Vec::with_capacity(config.n_steps),
        burn_in: burn,
    };
    for step in 0..config.n_steps {
        let lambda = proposal.log_lambda.exp();
        let candidate = proposal.draw(&current, prior, &mut rng);
        let u: f64 = rng.random();
        let (candidate_ld, refreshed) = eval(&candidate, Some(&current))?;
        if let Some(ld) = refreshed {
            current_ld = ld;
        }
        let a = acceptance_probability(current_ld, candidate_ld);
        let accept = u < a;
        if accept {
            current = candidate;
            current_ld = candidate_ld;
        }
        if config.adapt && step < burn {
            proposal.adapt(step, a);
        }
        chain.states.push(current.clone());
        chain.log_density.push(current_ld);
        chain.accepted.push(accept);
        chain.scale_history.push(lambda);
    }
    Ok(chain)
}

/// Adaptive random-walk Metropolis–Hastings on `log_density` (the full
/// unnormalized log target, prior included) over the prior's box.
pub fn rwmh<F>(log_density: F, prior: &Prior, config: &MhConfig) -> Result<Chain>
where
    F: Fn(&[f64]) -> f64,
{
    run_chain(&log_density, prior, config, 0)
}

/// Chain `chain_index` of a multi-chain run: uses its own RNG stream.
pub fn run_chain<F>(log_density: &F, prior: &Prior, config: &MhConfig, chain_index: u64) -> Result<Chain>
where
    F: Fn(&[f64]) -> f64,
{
    run_mh(prior, config, chain_index, |x| {
        if prior.contains(x) {
            Ok(log_density(x))
        } else {
            Ok(f64::NEG_INFINITY)
        }
    })
}

/// Independent chains in parallel, each initialized from its own prior draw.
pub fn run_chains<F>(log_density: &F, prior: &Prior, config: &MhConfig, n_chains: usize) -> Result<Vec<Chain>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    (0..n_chains as u64)
        .into_par_iter()
        .map(|c| run_chain(log_density, prior, config, c))
        .collect()
}

/// Pseudo-marginal chain with bookkeeping of estimator usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmChain {
    pub chain: Chain,
    pub estimator_calls: usize,
    /// Proposals auto-rejected because their estimate was `-∞`.
    pub neg_inf_rejections: usize,
}

/// Pseudo-marginal MH: the target is `log π_0(θ) + log L̂(θ)`, where the noisy
/// estimate at the current state is stored and reused until a proposal is accepted.
/// The estimator draws from its own RNG stream, so a noise-free estimator
/// reproduces [`rwmh`] on the exact target step for step.
pub fn pm_mh<E>(mut estimator: E, prior: &Prior, config: &MhConfig) -> Result<PmChain>
where
    E: FnMut(&[f64], &mut SimRng) -> Result<f64>,
{
    let mut est_rng = rng_stream(config.seed, 1);
    let mut calls = 0usize;
    let mut neg_inf = 0usize;
    let chain = run_mh(prior, config, 0, |x| {
        if !prior.contains(x) {
            return Ok(f64::NEG_INFINITY);
        }
        calls += 1;
        let ll = estimator(x, &mut est_rng)?;
        if ll == f64::NEG_INFINITY {
            neg_inf += 1;
        }
        Ok(prior.log_density(x) + ll)
    })?;
    Ok(PmChain {
        chain,
        estimator_calls: calls,
        neg_inf_rejections: neg_inf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{mean, variance};

    fn trunc_normal_prior() -> Prior {
        Prior::uniform(vec![-6.0], vec![6.0]).unwrap()
    }

    #[test]
    fn reflection_stays_in_box() {
        for x in [-7.3, -1.0, 0.0, 2.5, 3.0, 9.9, 25.0] {
            let y = reflect(x, 0.0, 3.0);
            assert!((0.0..=3.0).contains(&y), "{x} -> {y}");
        }
        assert!((reflect(3.5, 0.0, 3.0) - 2.5).abs() < 1e-15);
        assert!((reflect(-0.5, 0.0, 3.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn truncated_normal_moments() {
        let prior = trunc_normal_prior();
        let chain = rwmh(|x| -0.5 * x[0] * x[0], &prior, &MhConfig::with_steps(200_000, 3)).unwrap();
        let xs = chain.coordinate(0);
        assert!(mean(&xs).abs() < 0.03);
        assert!((variance(&xs) - 1.0).abs() < 0.05);
        assert!(xs.iter().all(|x| prior.contains(&[*x])));
    }

    #[test]
    fn flat_target_is_uniform() {
        let prior = Prior::uniform(vec![0.0], vec![1.0]).unwrap();
        let chain = rwmh(|_| 0.0, &prior, &MhConfig::with_steps(100_000, 5)).unwrap();
        let mut xs = chain.coordinate(0);
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, x)| ((i as f64 + 1.0) / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "ks {ks}");
    }

    #[test]
    fn seeded_chains_are_reproducible() {
        let prior = trunc_normal_prior();
        let a = rwmh(|x| -x[0].abs(), &prior, &MhConfig::with_steps(2000, 8)).unwrap();
        let b = rwmh(|x| -x[0].abs(), &prior, &MhConfig::with_steps(2000, 8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scale_frozen_after_burn_in() {
        let prior = trunc_normal_prior();
        let chain = rwmh(|x| -0.5 * x[0] * x[0], &prior, &MhConfig::with_steps(4000, 1)).unwrap();
        let tail = &chain.scale_history[chain.burn_in + 1..];
        assert!(tail.iter().all(|s| *s == tail[0]));
    }

    #[test]
    fn zero_noise_pm_reproduces_rwmh() {
        let prior = Prior::truncated_gaussian(vec![0.0], vec![1.0], vec![-5.0], vec![5.0]).unwrap();
        let ll = |x: &[f64]| -0.5 * (x[0] - 1.0).powi(2) / 0.5;
        let config = MhConfig::with_steps(5000, 21);
        let exact = rwmh(|x| prior.log_density(x) + ll(x), &prior, &config).unwrap();
        let pm = pm_mh(|x, _rng| Ok(ll(x)), &prior, &config).unwrap();
        assert_eq!(exact, pm.chain);
    }

    #[test]
    fn pm_recycles_the_current_estimate() {
        let prior = Prior::uniform(vec![-2.0], vec![2.0]).unwrap();
        let config = MhConfig::with_steps(3000, 4);
        let pm = pm_mh(
            |x, rng| Ok(-0.5 * x[0] * x[0] + 0.5 * rng.sample::<f64, _>(StandardNormal)),
            &prior,
            &config,
        )
        .unwrap();
        // one call for the initial state plus one per proposal; the stored value
        // changes only on acceptance
        assert_eq!(pm.estimator_calls, config.n_steps + 1);
        for i in 1..pm.chain.len() {
            if !pm.chain.accepted[i] {
                assert_eq!(pm.chain.log_density[i], pm.chain.log_density[i - 1]);
            }
        }
    }

    #[test]
    fn impossible_initialization_errors() {
        let prior = trunc_normal_prior();
        let r = rwmh(|_| f64::NEG_INFINITY, &prior, &MhConfig::with_steps(10, 0));
        assert!(matches!(r, Err(Error::Initialization(_))));
    }
}
