//! Intra-class correlation for the two outcome families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glmm::{Family, GlmmModel};
use crate::sampler::{median, summarize, PosteriorDraws, DEFAULT_CI_LEVEL};
use crate::special::trigamma;

/// Level-1 variance of the standard logistic latent scale (pi^2 / 3, as
/// conventionally rounded).
pub const LATENT_LOGISTIC_VARIANCE: f64 = 3.29;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccPoint {
    pub var_village: f64,
    pub var_level1: f64,
    pub icc: f64,
}

fn check_var(var_village: f64) -> Result<()> {
    if !(var_village >= 0.0) || !var_village.is_finite() {
        return Err(Error::Validation(format!(
            "village variance must be finite and nonnegative, got {var_village}"
        )));
    }
    Ok(())
}

pub fn icc_ordinal(var_village: f64) -> Result<IccPoint> {
    check_var(var_village)?;
    Ok(IccPoint {
        var_village,
        var_level1: LATENT_LOGISTIC_VARIANCE,
        icc: var_village / (var_village + LATENT_LOGISTIC_VARIANCE),
    })
}

/// Observation-level variance of a log-link negative binomial model:
/// `trigamma(1 / (1/lambda + 1/theta))`.
pub fn negbin_level1_variance(lambda: f64, theta: f64) -> Result<f64> {
    if !(lambda > 0.0) || !(theta > 0.0) {
        return Err(Error::Validation(format!(
            "lambda and theta must be positive, got lambda={lambda}, theta={theta}"
        )));
    }
    Ok(trigamma(1.0 / (1.0 / lambda + 1.0 / theta)))
}

pub fn icc_negbin(var_village: f64, lambda: f64, theta: f64) -> Result<IccPoint> {
    check_var(var_village)?;
    let var_level1 = negbin_level1_variance(lambda, theta)?;
    Ok(IccPoint {
        var_village,
        var_level1,
        icc: var_village / (var_village + var_level1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub median: f64,
    pub mean: f64,
    pub ci89_lower: f64,
    pub ci89_upper: f64,
}

impl PosteriorSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        let iv = summarize(values, DEFAULT_CI_LEVEL)?;
        Ok(PosteriorSummary {
            median: median(values),
            mean: iv.mean,
            ci89_lower: iv.lower,
            ci89_upper: iv.upper,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccReport {
    pub label: String,
    pub family: String,
    pub covariates: Vec<String>,
    pub n_draws: usize,
    /// Sample mean of the outcome, used as lambda (count model only).
    pub lambda: Option<f64>,
    pub var_village: PosteriorSummary,
    pub var_level1: PosteriorSummary,
    pub icc: PosteriorSummary,
    pub notes: Vec<String>,
}

/// ICC evaluated draw by draw and summarized by median and 89% interval.
pub fn icc_from_draws(label: &str, model: &GlmmModel, draws: &PosteriorDraws) -> Result<IccReport> {
    let sigma_idx = draws
        .index_of("sigma_village")
        .ok_or_else(|| Error::Validation("draws lack sigma_village".into()))?;
    let spec = model.spec();
    let mut notes = Vec::new();
    let mut var_v = Vec::with_capacity(draws.n_total());
    let mut var_1 = Vec::with_capacity(draws.n_total());
    let mut icc = Vec::with_capacity(draws.n_total());
    let lambda = match spec.family {
        Family::OrderedLogistic { .. } => {
            notes.push(
                "ordinal ICC uses the latent logistic variance 3.29 and may understate \
                 the within-village correlation on the observed scale"
                    .into(),
            );
            for d in draws.iter_draws() {
                let p = icc_ordinal(d[sigma_idx].powi(2))?;
                var_v.push(p.var_village);
                var_1.push(p.var_level1);
                icc.push(p.icc);
            }
            None
        }
        Family::NegativeBinomial => {
            let theta_idx = draws
                .index_of("theta")
                .ok_or_else(|| Error::Validation("draws lack theta".into()))?;
            let lambda = model
                .design()
                .outcome_mean()
                .ok_or_else(|| Error::Validation("no observed outcomes".into()))?;
            notes.push("lambda is the sample mean of the outcome".into());
            for d in draws.iter_draws() {
                let p = icc_negbin(d[sigma_idx].powi(2), lambda, d[theta_idx])?;
                var_v.push(p.var_village);
                var_1.push(p.var_level1);
                icc.push(p.icc);
            }
            Some(lambda)
        }
    };
    notes.push("covariates enter on their raw (unstandardized) scale".into());
    Ok(IccReport {
        label: label.to_string(),
        family: spec.family.label().to_string(),
        covariates: spec.fixed_effects.iter().map(|c| c.name().to_string()).collect(),
        n_draws: draws.n_total(),
        lambda,
        var_village: PosteriorSummary::of(&var_v)?,
        var_level1: PosteriorSummary::of(&var_1)?,
        icc: PosteriorSummary::of(&icc)?,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ordinal_symmetry_point() {
        assert!((icc_ordinal(3.29).unwrap().icc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ordinal_table_values() {
        let dg = icc_ordinal(0.27f64.powi(2)).unwrap().icc;
        assert!((dg - 0.0729 / 3.3629).abs() < 1e-15);
        assert!((dg * 100.0 - 2.2).abs() < 0.05);
        let ug = icc_ordinal(0.49f64.powi(2)).unwrap().icc;
        assert!((ug * 100.0 - 6.8).abs() < 0.05);
    }

    #[test]
    fn negative_variance_rejected() {
        assert!(icc_ordinal(-0.1).is_err());
        assert!(icc_negbin(-0.1, 1.0, 1.0).is_err());
        assert!(icc_negbin(0.1, 0.0, 1.0).is_err());
        assert!(icc_negbin(0.1, 1.0, -1.0).is_err());
    }

    #[test]
    fn negbin_trigamma_one() {
        let p = icc_negbin(PI * PI / 6.0, 2.0, 2.0).unwrap();
        assert!((p.var_level1 - PI * PI / 6.0).abs() < 1e-13);
        assert!((p.icc - 0.5).abs() < 1e-13);
    }

    #[test]
    fn negbin_series_oracle() {
        // psi_1(x) = sum_{n >= 0} 1 / (x + n)^2, summed directly with an
        // integral tail correction.
        let x = 0.75;
        let n_terms = 200_000;
        let mut s = 0.0;
        for n in (0..n_terms).rev() {
            let t = x + n as f64;
            s += 1.0 / (t * t);
        }
        let tail_at = x + n_terms as f64;
        s += 1.0 / tail_at + 0.5 / (tail_at * tail_at) + 1.0 / (6.0 * tail_at.powi(3));
        let v = negbin_level1_variance(12.0, 0.8).unwrap();
        assert!((v - s).abs() < 1e-9, "{v} vs {s}");
    }

    #[test]
    fn negbin_limit() {
        let p = icc_negbin(0.5, 1e9, 1e9).unwrap();
        assert!(p.var_level1 < 1e-8);
        assert!(p.icc > 1.0 - 1e-7);
    }

    #[test]
    fn monotone_in_village_variance() {
        let mut prev_o = -1.0;
        let mut prev_n = -1.0;
        for i in 0..50 {
            let v = i as f64 * 0.2;
            let o = icc_ordinal(v).unwrap().icc;
            let n = icc_negbin(v, 5.0, 1.3).unwrap().icc;
            assert!(o > prev_o && n > prev_n);
            prev_o = o;
            prev_n = n;
        }
    }
}
