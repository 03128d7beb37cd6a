//! Draw-wise model evaluation: pointwise log-likelihood, marginal-effect
//! curves and posterior predictive simulation.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::psis::LoglikMatrix;
use crate::datapipe::{CoopRow, Covariate};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::glmm::{linear_predictor, ordinal_probs_unchecked, GlmmModel, Params};
use crate::rng::stream;
use crate::sampler::{summarize, PosteriorDraws, DEFAULT_CI_LEVEL};

fn draw_params(model: &GlmmModel, draws: &PosteriorDraws) -> Result<Vec<Params>> {
    if draws.param_names != model.param_names() {
        return Err(Error::Validation(
            "draws do not match the model's parameter layout".into(),
        ));
    }
    draws.iter_draws().map(|d| model.unflatten(d)).collect()
}

/// Log-likelihood of every (draw, observation) pair.
pub fn pointwise_loglik(
    model: &GlmmModel,
    draws: &PosteriorDraws,
    execution: Execution,
) -> Result<LoglikMatrix> {
    let params = draw_params(model, draws)?;
    let rows = map_indexed(params.len(), execution, |s| model.pointwise_loglik(&params[s]));
    let n_obs = model.design().n_rows();
    let mut values = Vec::with_capacity(params.len() * n_obs);
    for r in rows {
        values.extend(r?);
    }
    LoglikMatrix::new(params.len(), n_obs, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalPoint {
    pub grid_value: f64,
    pub mean: f64,
    pub ci89_lower: f64,
    pub ci89_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MarginalCurve {
    /// Expected count per grid value.
    Count(Vec<MarginalPoint>),
    /// Probability curve per category.
    Categories(Vec<Vec<MarginalPoint>>),
}

/// Population-level (`a_V = 0`) effect of `covariate` over `grid`, with the
/// remaining covariates held at their sample means.
pub fn marginal_effect(
    model: &GlmmModel,
    draws: &PosteriorDraws,
    covariate: Covariate,
    grid: &[f64],
) -> Result<MarginalCurve> {
    if grid.is_empty() {
        return Err(Error::Validation("marginal effect grid is empty".into()));
    }
    let spec = model.spec();
    let target = spec
        .fixed_effects
        .iter()
        .position(|c| *c == covariate)
        .ok_or_else(|| Error::Validation(format!("covariate {covariate} is not in the model")))?;
    let means = &model.design().covariate_means;
    let params = draw_params(model, draws)?;

    let eta_at = |p: &Params, g: f64| -> f64 {
        let mut eta = p.intercept().unwrap_or(0.0);
        for (k, b) in p.betas().iter().enumerate() {
            eta += b * if k == target { g } else { means[k] };
        }
        eta
    };
    let summarize_point = |g: f64, values: &[f64]| -> Result<MarginalPoint> {
        let iv = summarize(values, DEFAULT_CI_LEVEL)?;
        Ok(MarginalPoint {
            grid_value: g,
            mean: iv.mean,
            ci89_lower: iv.lower,
            ci89_upper: iv.upper,
        })
    };

    match spec.n_cutpoints() {
        0 => {
            let points = grid
                .iter()
                .map(|&g| {
                    let values: Vec<f64> = params.iter().map(|p| eta_at(p, g).exp()).collect();
                    summarize_point(g, &values)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MarginalCurve::Count(points))
        }
        n_cut => {
            let mut curves = vec![Vec::with_capacity(grid.len()); n_cut + 1];
            for &g in grid {
                let probs: Vec<Vec<f64>> = params
                    .iter()
                    .map(|p| match p {
                        Params::OrderedLogistic(o) => ordinal_probs_unchecked(eta_at(p, g), &o.cutpoints),
                        Params::NegBin(_) => unreachable!("ordinal spec"),
                    })
                    .collect();
                for (c, curve) in curves.iter_mut().enumerate() {
                    let values: Vec<f64> = probs.iter().map(|pr| pr[c]).collect();
                    curve.push(summarize_point(g, &values)?);
                }
            }
            Ok(MarginalCurve::Categories(curves))
        }
    }
}

/// Evenly spaced grid over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Simulated outcomes for `new_rows`, one vector per posterior draw.
/// Rows from villages unseen by the model get a fresh `a_V ~ Normal(0, sigma)`.
pub fn posterior_predict(
    model: &GlmmModel,
    draws: &PosteriorDraws,
    new_rows: &[CoopRow],
    seed: u64,
) -> Result<Vec<Vec<u64>>> {
    let params = draw_params(model, draws)?;
    let spec = model.spec();
    let villages = &model.design().villages;
    let mut rng = stream(seed, 0);
    let mut out = Vec::with_capacity(params.len());
    for p in &params {
        let mut sims = Vec::with_capacity(new_rows.len());
        for row in new_rows {
            let a_v = match villages.binary_search(&row.village_id) {
                Ok(j) => p.village_effects()[j],
                Err(_) => Normal::new(0.0, p.sigma_village())
                    .map_err(|e| Error::Model(e.to_string()))?
                    .sample(&mut rng),
            };
            let eta = linear_predictor(row, &spec.fixed_effects, p.betas(), a_v, p.intercept())?;
            sims.push(simulate_outcome(p, eta, &mut rng)?);
        }
        out.push(sims);
    }
    Ok(out)
}

/// One outcome draw at linear predictor `eta`.
pub(crate) fn simulate_outcome<R: Rng>(params: &Params, eta: f64, rng: &mut R) -> Result<u64> {
    match params {
        Params::NegBin(p) => sample_negbin(eta.exp(), p.theta, rng),
        Params::OrderedLogistic(p) => {
            let probs = ordinal_probs_unchecked(eta, &p.cutpoints);
            Ok(sample_category(&probs, rng) as u64)
        }
    }
}

pub(crate) fn sample_category<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    probs.len() - 1
}

/// Poisson-gamma draw with mean `mu` and dispersion `theta`.
pub(crate) fn sample_negbin<R: Rng>(mu: f64, theta: f64, rng: &mut R) -> Result<u64> {
    if !(mu.is_finite() && mu > 0.0 && theta > 0.0) {
        return Err(Error::Model(format!(
            "cannot simulate negative binomial with mu={mu}, theta={theta}"
        )));
    }
    let rate = Gamma::new(theta, mu / theta)
        .map_err(|e| Error::Model(e.to_string()))?
        .sample(rng);
    if !(rate > 0.0) {
        return Ok(0);
    }
    let y: f64 = Poisson::new(rate)
        .map_err(|e| Error::Model(e.to_string()))?
        .sample(rng);
    Ok(y as u64)
}
