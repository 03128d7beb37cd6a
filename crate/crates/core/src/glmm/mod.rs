//! Model specifications, parameters and the multilevel log posterior.
//!
//! Both families share the linear predictor
//! `eta = a_V + sum_k beta_k x_k` (plus an intercept for the count model),
//! with a village random intercept `a_V ~ Normal(0, sigma_village)`.

mod likelihood;
mod model;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::{CoopDataset, CoopRow, Covariate, Outcome};
use crate::error::{Error, Result};

pub use likelihood::{negbin_logpmf, ordered_logistic_logpmf, ordered_logistic_probs};
pub(crate) use likelihood::{negbin_term, ordinal_probs_unchecked, ordinal_term};
pub use model::{grad_log_posterior, log_posterior, Design, GlmmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    OrderedLogistic { n_categories: usize },
    NegativeBinomial,
}

impl Family {
    pub fn label(&self) -> &'static str {
        match self {
            Family::OrderedLogistic { .. } => "ordered_logistic",
            Family::NegativeBinomial => "negative_binomial",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::OrderedLogistic { n_categories } => {
                write!(f, "ordered_logistic(K={n_categories})")
            }
            Family::NegativeBinomial => f.write_str("negative_binomial"),
        }
    }
}

/// Prior scales. Betas ~ Normal(0, beta_scale); intercept and each cutpoint
/// ~ Student-t(dof, 0, intercept_scale); sigma_village ~ half-Student-t(dof,
/// 0, sigma_scale); theta ~ Gamma(theta_shape, theta_rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSet {
    pub beta_scale: f64,
    pub intercept_scale: f64,
    pub sigma_scale: f64,
    pub student_t_dof: f64,
    pub theta_shape: f64,
    pub theta_rate: f64,
}

impl Default for PriorSet {
    fn default() -> Self {
        PriorSet {
            beta_scale: 5.0,
            intercept_scale: 10.0,
            sigma_scale: 2.5,
            student_t_dof: 3.0,
            theta_shape: 0.01,
            theta_rate: 0.01,
        }
    }
}

impl PriorSet {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("beta_scale", self.beta_scale),
            ("intercept_scale", self.intercept_scale),
            ("sigma_scale", self.sigma_scale),
            ("student_t_dof", self.student_t_dof),
            ("theta_shape", self.theta_shape),
            ("theta_rate", self.theta_rate),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!(
                    "prior {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub outcome: Outcome,
    pub fixed_effects: Vec<Covariate>,
    #[serde(default)]
    pub priors: PriorSet,
}

impl ModelSpec {
    pub fn new(family: Family, outcome: Outcome, fixed_effects: Vec<Covariate>) -> Self {
        ModelSpec {
            family,
            outcome,
            fixed_effects,
            priors: PriorSet::default(),
        }
    }

    pub fn with_priors(mut self, priors: PriorSet) -> Self {
        self.priors = priors;
        self
    }

    /// Ordinal model whose category count is taken from the data
    /// (highest observed category + 1, at least 2).
    pub fn ordinal_from_data(
        dataset: &CoopDataset,
        outcome: Outcome,
        fixed_effects: Vec<Covariate>,
    ) -> Result<Self> {
        let max = dataset
            .rows
            .iter()
            .filter_map(|r| r.outcome(outcome))
            .max()
            .ok_or_else(|| Error::Validation(format!("no observed {outcome} outcomes")))?;
        Ok(ModelSpec::new(
            Family::OrderedLogistic {
                n_categories: (max as usize + 1).max(2),
            },
            outcome,
            fixed_effects,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        if let Family::OrderedLogistic { n_categories } = self.family {
            if n_categories < 2 {
                return Err(Error::Validation(format!(
                    "ordered logistic needs at least 2 categories, got {n_categories}"
                )));
            }
        }
        for (i, c) in self.fixed_effects.iter().enumerate() {
            if self.fixed_effects[..i].contains(c) {
                return Err(Error::Validation(format!("duplicate fixed effect {c}")));
            }
        }
        Ok(())
    }

    pub fn n_cutpoints(&self) -> usize {
        match self.family {
            Family::OrderedLogistic { n_categories } => n_categories - 1,
            Family::NegativeBinomial => 0,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: ModelSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedLogisticParams {
    pub cutpoints: Vec<f64>,
    pub betas: Vec<f64>,
    pub village_effects: Vec<f64>,
    pub sigma_village: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegBinParams {
    pub intercept: f64,
    pub betas: Vec<f64>,
    pub village_effects: Vec<f64>,
    pub sigma_village: f64,
    pub theta: f64,
}

/// Constrained-scale parameters. Village effects follow the sorted order of
/// village ids in the model's [`Design`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Params {
    OrderedLogistic(OrderedLogisticParams),
    NegBin(NegBinParams),
}

impl Params {
    pub fn betas(&self) -> &[f64] {
        match self {
            Params::OrderedLogistic(p) => &p.betas,
            Params::NegBin(p) => &p.betas,
        }
    }

    pub fn village_effects(&self) -> &[f64] {
        match self {
            Params::OrderedLogistic(p) => &p.village_effects,
            Params::NegBin(p) => &p.village_effects,
        }
    }

    pub fn sigma_village(&self) -> f64 {
        match self {
            Params::OrderedLogistic(p) => p.sigma_village,
            Params::NegBin(p) => p.sigma_village,
        }
    }

    pub fn intercept(&self) -> Option<f64> {
        match self {
            Params::OrderedLogistic(_) => None,
            Params::NegBin(p) => Some(p.intercept),
        }
    }

    pub fn validate(&self, spec: &ModelSpec, n_villages: usize) -> Result<()> {
        let dims_ok = match (self, spec.family) {
            (Params::OrderedLogistic(p), Family::OrderedLogistic { n_categories }) => {
                p.cutpoints.len() + 1 == n_categories
            }
            (Params::NegBin(_), Family::NegativeBinomial) => true,
            _ => false,
        };
        if !dims_ok
            || self.betas().len() != spec.fixed_effects.len()
            || self.village_effects().len() != n_villages
        {
            return Err(Error::Validation(
                "parameter dimensions do not match the model specification".into(),
            ));
        }
        if !(self.sigma_village() > 0.0) {
            return Err(Error::Validation("sigma_village must be positive".into()));
        }
        match self {
            Params::OrderedLogistic(p) => {
                if p.cutpoints.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::Validation("cutpoints must be strictly increasing".into()));
                }
            }
            Params::NegBin(p) => {
                if !(p.theta > 0.0) {
                    return Err(Error::Validation("theta must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// `a_V + intercept + sum_k beta_k x_k` for one dataset row.
pub fn linear_predictor(
    row: &CoopRow,
    covariates: &[Covariate],
    betas: &[f64],
    village_effect: f64,
    intercept: Option<f64>,
) -> Result<f64> {
    if covariates.len() != betas.len() {
        return Err(Error::Validation(
            "one coefficient per covariate required".into(),
        ));
    }
    let mut eta = village_effect + intercept.unwrap_or(0.0);
    for (cov, beta) in covariates.iter().zip(betas) {
        let x = row.covariate(*cov).ok_or_else(|| {
            Error::Validation(format!(
                "row {:?} is missing covariate {cov}",
                row.person_id
            ))
        })?;
        eta += beta * x;
    }
    Ok(eta)
}
