//! Convergence diagnostics and posterior summaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};

/// Split-R̂ for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rhat {
    pub value: f64,
    /// Set when the within-chain variance is zero, where R̂ is undefined.
    pub degenerate: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Halves every chain (dropping the middle draw of odd-length chains).
fn split(chains: &[Vec<f64>], n: usize) -> Vec<&[f64]> {
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect()
}

/// Split-chain potential scale reduction.
///
/// Requires at least two chains of equal length with four or more draws.
/// Zero within-chain variance yields 1 (all draws identical) or infinity
/// (chains stuck at different values), flagged as degenerate.
pub fn rhat(chains: &[Vec<f64>]) -> Result<Rhat> {
    if chains.len() < 2 {
        return Err(FunnelError::InvalidConfig("R-hat needs at least 2 chains".into()));
    }
    let n = chains[0].len();
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return Err(FunnelError::InvalidConfig(
            "R-hat needs equal-length chains with at least 4 draws".into(),
        ));
    }
    let parts = split(chains, n);
    let len = parts[0].len() as f64;
    let m = parts.len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let grand = mean(&means);
    let b = len / (m - 1.0) * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let w = parts.iter().map(|p| sample_var(p)).sum::<f64>() / m;
    if w <= 0.0 {
        let value = if b <= 0.0 { 1.0 } else { f64::INFINITY };
        return Ok(Rhat {
            value,
            degenerate: true,
        });
    }
    let var_plus = (len - 1.0) / len * w + b / len;
    Ok(Rhat {
        value: (var_plus / w).sqrt(),
        degenerate: false,
    })
}

/// Multi-chain effective sample size from split chains, truncating the
/// autocorrelation sum at the first negative pair of lags.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let n = chains.first().map_or(0, Vec::len);
    if chains.is_empty() || n < 4 {
        return f64::NAN;
    }
    let parts = split(chains, n);
    let len = parts[0].len();
    let m = parts.len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let vars: Vec<f64> = parts.iter().map(|p| sample_var(p)).collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let b_over_n = means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (m - 1.0);
    let var_plus = (len as f64 - 1.0) / len as f64 * w + b_over_n;
    if var_plus <= 0.0 {
        return f64::NAN;
    }
    let autocov = |lag: usize| -> f64 {
        parts
            .iter()
            .zip(&means)
            .map(|(p, &mu)| {
                (0..len - lag).map(|t| (p[t] - mu) * (p[t + lag] - mu)).sum::<f64>() / len as f64
            })
            .sum::<f64>()
            / m
    };
    let rho = |lag: usize| 1.0 - (w - autocov(lag)) / var_plus;
    let mut sum = 0.0;
    let mut lag = 1;
    // Geyer initial positive sequence over pairs (rho_{2k-1} + rho_{2k})
    let mut prev_pair = f64::INFINITY;
    while lag + 1 < len {
        let pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        lag += 2;
    }
    let total = m * len as f64;
    // cap the estimate at total·log10(total) for antithetic chains
    let tau = (1.0 + 2.0 * sum).max(1.0 / total.log10());
    total / tau
}

/// Type-7 quantile (linear interpolation of order statistics) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub median: f64,
    pub q97_5: f64,
}

impl Summary {
    pub fn covers(&self, value: f64) -> bool {
        self.q2_5 <= value && value <= self.q97_5
    }
}

/// Mean, sd and 2.5/50/97.5% quantiles of a set of draws.
pub fn posterior_summary(draws: &[f64]) -> Result<Summary> {
    if draws.is_empty() {
        return Err(FunnelError::InvalidConfig("cannot summarize zero draws".into()));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mu = mean(draws);
    let sd = if draws.len() > 1 {
        sample_var(draws).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        mean: mu,
        sd,
        q2_5: quantile_sorted(&sorted, 0.025),
        median: quantile_sorted(&sorted, 0.5),
        q97_5: quantile_sorted(&sorted, 0.975),
    })
}

/// Posterior of `a − b` from draws of two independently fitted groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub summary: Summary,
    pub differences: Vec<f64>,
}

/// Pairs draws of `a` and `b` and summarizes their difference. When lengths
/// differ the shorter set is resampled with replacement (seeded) up to the
/// longer length.
pub fn contrast(a: &[f64], b: &[f64], seed: u64) -> Result<Contrast> {
    if a.is_empty() || b.is_empty() {
        return Err(FunnelError::InvalidConfig("contrast needs nonempty draws".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = a.len().max(b.len());
    let mut pick = |xs: &[f64], i: usize| {
        if xs.len() == n {
            xs[i]
        } else {
            xs[rng.gen_range(0..xs.len())]
        }
    };
    let differences: Vec<f64> = (0..n).map(|i| pick(a, i) - pick(b, i)).collect();
    Ok(Contrast {
        summary: posterior_summary(&differences)?,
        differences,
    })
}
