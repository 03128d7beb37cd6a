//! Pareto-smoothed importance sampling diagnostics for leave-one-out.
//!
//! For each observation the leave-one-out importance ratios are
//! `exp(-loglik_s)`. A generalized Pareto distribution is fitted to the
//! exceedances of the largest [`TAIL_FRACTION`] of ratios; its shape `k`
//! tells how reliable the importance-sampling estimate is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::special::log_sum_exp;

pub const TAIL_FRACTION: f64 = 0.2;
pub const K_THRESHOLD: f64 = 0.7;
pub const MIN_DRAWS: usize = 100;
const MIN_TAIL: usize = 5;

/// Pointwise log-likelihood, `n_draws x n_obs`, row-major by draw.
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikMatrix {
    pub n_draws: usize,
    pub n_obs: usize,
    pub values: Vec<f64>,
}

impl LoglikMatrix {
    pub fn new(n_draws: usize, n_obs: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_draws * n_obs {
            return Err(Error::Validation("log-likelihood matrix has the wrong size".into()));
        }
        Ok(LoglikMatrix {
            n_draws,
            n_obs,
            values,
        })
    }

    pub fn get(&self, draw: usize, obs: usize) -> f64 {
        self.values[draw * self.n_obs + obs]
    }

    pub fn column(&self, obs: usize) -> Vec<f64> {
        (0..self.n_draws).map(|s| self.get(s, obs)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoKReport {
    /// One entry per observation; `None` when the tail is too short to fit.
    pub k: Vec<Option<f64>>,
    pub threshold: f64,
    pub flagged: Vec<usize>,
    pub n_draws: usize,
    pub tail_fraction: f64,
}

impl ParetoKReport {
    pub fn n_flagged(&self) -> usize {
        self.flagged.len()
    }
}

/// Shape and scale of a generalized Pareto fit to nonnegative exceedances
/// sorted in ascending order, by the profile-likelihood quadrature of Zhang
/// and Stephens with a weak prior pulling `k` towards 0.5.
pub fn gpd_fit(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    let nf = n as f64;
    const PRIOR: f64 = 3.0;
    let m = 30 + (nf.sqrt() as usize);
    let x_max = sorted[n - 1];
    let mut x_star = sorted[((nf / 4.0 + 0.5).floor() as usize).saturating_sub(1).min(n - 1)];
    if !(x_star > 0.0) {
        x_star = sorted.iter().copied().find(|v| *v > 0.0).unwrap_or(x_max);
    }
    let thetas: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / PRIOR / x_star)
        .collect();
    let profile = |theta: f64| -> f64 {
        let a = -theta;
        let k = sorted.iter().map(|x| (a * x).ln_1p()).sum::<f64>() / nf;
        nf * ((a / k).ln() - k - 1.0)
    };
    let log_lik: Vec<f64> = thetas.iter().map(|t| profile(*t)).collect();
    let norm = log_lik.iter().fold(f64::NEG_INFINITY, |acc, l| log_sum_exp(acc, *l));
    let theta_hat: f64 = thetas
        .iter()
        .zip(&log_lik)
        .map(|(t, l)| t * (l - norm).exp())
        .filter(|v| v.is_finite())
        .sum();
    let k = sorted.iter().map(|x| (-theta_hat * x).ln_1p()).sum::<f64>() / nf;
    let sigma = -k / theta_hat;
    // Weakly informative shrinkage of k.
    let k = (nf * k + 10.0 * 0.5) / (nf + 10.0);
    (k, sigma)
}

/// Pareto shape for one observation's log-likelihood draws.
pub fn pareto_k(loglik: &[f64]) -> Option<f64> {
    let s = loglik.len();
    let m = (TAIL_FRACTION * s as f64).floor() as usize;
    if m < MIN_TAIL || m >= s {
        return None;
    }
    let mut log_ratios: Vec<f64> = loglik.iter().map(|l| -l).collect();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for r in &mut log_ratios {
        *r -= max;
    }
    log_ratios.sort_by(f64::total_cmp);
    let cutoff = log_ratios[s - m - 1];
    let exp_cut = cutoff.exp();
    let tail: Vec<f64> = log_ratios[s - m..]
        .iter()
        .map(|r| (r.exp() - exp_cut).max(0.0))
        .collect();
    if !(tail[m - 1] > 0.0) {
        // All tail ratios equal the cutoff: there is no tail to speak of.
        return Some(0.0);
    }
    Some(gpd_fit(&tail).0)
}

pub fn psis_pareto_k(loglik: &LoglikMatrix, execution: Execution) -> Result<ParetoKReport> {
    if loglik.n_draws < MIN_DRAWS {
        return Err(Error::Validation(format!(
            "Pareto-k diagnostics need at least {MIN_DRAWS} draws, got {}",
            loglik.n_draws
        )));
    }
    let k = map_indexed(loglik.n_obs, execution, |i| pareto_k(&loglik.column(i)));
    let flagged = k
        .iter()
        .enumerate()
        .filter(|(_, k)| matches!(k, Some(v) if *v > K_THRESHOLD))
        .map(|(i, _)| i)
        .collect();
    Ok(ParetoKReport {
        k,
        threshold: K_THRESHOLD,
        flagged,
        n_draws: loglik.n_draws,
        tail_fraction: TAIL_FRACTION,
    })
}
