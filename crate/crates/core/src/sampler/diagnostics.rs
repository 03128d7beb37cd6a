//! Convergence diagnostics and interval summaries over chains of draws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CI_LEVEL: f64 = 0.89;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split-chain potential scale reduction. Each chain is halved (dropping the
/// middle draw of odd-length chains) before comparing between- and
/// within-chain variance.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Validation("rhat needs at least 2 chains".into()));
    }
    let n_min = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n_min < 4 {
        return Err(Error::Validation("rhat needs at least 4 draws per chain".into()));
    }
    let half = n_min / 2;
    let mut splits: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = &c[..n_min];
        splits.push(&c[..half]);
        splits.push(&c[n_min - half..]);
    }
    let n = half as f64;
    let m = splits.len() as f64;
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let within = splits.iter().map(|s| sample_var(s)).sum::<f64>() / m;
    if !(within > 0.0) {
        return Err(Error::Degenerate(
            "zero within-chain variance in all chains".into(),
        ));
    }
    let grand = mean(&means);
    let between = n / (m - 1.0) * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let var_plus = (n - 1.0) / n * within + between / n;
    Ok((var_plus / within).sqrt())
}

fn autocovariance(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size using Geyer's initial monotone
/// sequence on the combined autocorrelation estimate.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() {
        return Err(Error::Validation("ess needs at least one chain".into()));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::Validation("ess needs at least 4 draws per chain".into()));
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let m = chains.len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov0: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| autocovariance(c, *mu, 0))
        .collect();
    let chain_var: Vec<f64> = acov0.iter().map(|a| a * nf / (nf - 1.0)).collect();
    let mean_var = mean(&chain_var);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(mean_var > 0.0) || !(var_plus > 0.0) {
        return Err(Error::Degenerate("constant chain".into()));
    }
    let mean_acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| autocovariance(c, *mu, lag))
            .sum::<f64>()
            / m as f64
    };

    let mut rho = vec![0.0; n + 1];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
    rho[1] = rho_odd;
    let mut s = 1;
    while s < n.saturating_sub(4) && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[s + 1] = rho_even;
            rho[s + 2] = rho_odd;
        }
        s += 2;
    }
    let max_s = s;
    if rho_even > 0.0 {
        rho[max_s + 1] = rho_even;
    }
    let mut s = 1;
    while s + 3 <= max_s {
        if rho[s + 1] + rho[s + 2] > rho[s - 1] + rho[s] {
            rho[s + 1] = (rho[s - 1] + rho[s]) / 2.0;
            rho[s + 2] = rho[s + 1];
        }
        s += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho[..max_s].iter().sum::<f64>() + rho[max_s + 1];
    Ok((total / tau).min(total * total.log10()))
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n - 1) p`, zero-based). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean and central credible interval at `level`.
pub fn summarize(draws: &[f64], level: f64) -> Result<Interval> {
    if draws.is_empty() {
        return Err(Error::Validation("cannot summarize zero draws".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Validation(format!(
            "interval level must lie in (0, 1), got {level}"
        )));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(Interval {
        mean: mean(draws),
        lower: quantile_sorted(&sorted, tail),
        upper: quantile_sorted(&sorted, 1.0 - tail),
    })
}

pub fn median(draws: &[f64]) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.5)
}
