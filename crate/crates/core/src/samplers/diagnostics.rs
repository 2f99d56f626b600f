use serde::{Deserialize, Serialize};

use super::Chain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Per-coordinate effective sample size summed over chains.
    pub ess: Vec<f64>,
    /// Per-coordinate split-R̂; `None` with a single chain.
    pub rhat: Option<Vec<f64>>,
    /// Pooled post-burn-in acceptance rate.
    pub acceptance_rate: f64,
}

/// Effective sample size from Geyer's initial monotone positive sequence.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n as f64 * c0)
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

/// Split-R̂ of equally long traces.
pub fn split_rhat(traces: &[Vec<f64>]) -> Result<f64> {
    if traces.len() < 2 {
        return Err(Error::input("split-R-hat needs at least two chains"));
    }
    let len = traces[0].len();
    if let Some(t) = traces.iter().find(|t| t.len() != len) {
        return Err(Error::UnequalChains(len, t.len()));
    }
    let half = len / 2;
    if half < 2 {
        return Err(Error::input("chains are too short for split-R-hat"));
    }
    let halves: Vec<&[f64]> = traces.iter().flat_map(|t| [&t[..half], &t[len - half..]]).collect();
    let n = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let within: Vec<f64> = halves
        .iter()
        .zip(&means)
        .map(|(h, m)| h.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    let m = halves.len() as f64;
    let grand = means.iter().sum::<f64>() / m;
    let b = n * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let w = within.iter().sum::<f64>() / m;
    let var_plus = (n - 1.0) / n * w + b / n;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((var_plus / w).sqrt())
}

pub fn chain_diagnostics(chains: &[Chain]) -> Result<ChainDiagnostics> {
    let first = chains.first().ok_or_else(|| Error::input("no chains supplied"))?;
    for c in chains {
        if c.len() != first.len() || c.burn_in != first.burn_in {
            return Err(Error::UnequalChains(first.len(), c.len()));
        }
    }
    let dim = first.dim();
    let ess = (0..dim)
        .map(|d| chains.iter().map(|c| effective_sample_size(&c.coordinate(d))).sum())
        .collect();
    let rhat = if chains.len() >= 2 {
        Some(
            (0..dim)
                .map(|d| split_rhat(&chains.iter().map(|c| c.coordinate(d)).collect::<Vec<_>>()))
                .collect::<Result<Vec<f64>>>()?,
        )
    } else {
        None
    };
    let (acc, total) = chains.iter().fold((0usize, 0usize), |(a, t), c| {
        let kept = &c.accepted[c.burn_in..];
        (a + kept.iter().filter(|x| **x).count(), t + kept.len())
    });
    Ok(ChainDiagnostics {
        ess,
        rhat,
        acceptance_rate: acc as f64 / total.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng_stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn iid(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rng_stream(seed, 0);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn iid_chains_look_mixed() {
        let traces: Vec<Vec<f64>> = (0..4).map(|s| iid(s, 5000)).collect();
        let r = split_rhat(&traces).unwrap();
        assert!((0.99..=1.01).contains(&r), "rhat {r}");
        for t in &traces {
            assert!(effective_sample_size(t) >= 0.8 * 5000.0);
        }
    }

    #[test]
    fn stuck_chains_have_large_rhat() {
        let r = split_rhat(&[vec![0.0; 100], vec![1.0; 100]]).unwrap();
        assert!(r >= 2.0);
    }

    #[test]
    fn unequal_lengths_rejected() {
        assert!(matches!(
            split_rhat(&[vec![0.0; 10], vec![0.0; 12]]),
            Err(Error::UnequalChains(10, 12))
        ));
    }

    #[test]
    fn acceptance_is_a_plain_count() {
        let chain = Chain {
            states: vec![vec![0.0]; 8],
            log_density: vec![0.0; 8],
            accepted: vec![true, false, true, true, false, true, false, false],
            scale_history: vec![1.0; 8],
            burn_in: 2,
        };
        let d = chain_diagnostics(&[chain]).unwrap();
        assert_eq!(d.acceptance_rate, 3.0 / 6.0);
        assert!(d.rhat.is_none());
    }
}
