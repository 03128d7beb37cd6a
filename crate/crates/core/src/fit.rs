//! Fitting a model specification to a dataset and the `fit.json` record.

use serde::{Deserialize, Serialize};

use crate::datapipe::CoopDataset;
use crate::error::Result;
use crate::glmm::{GlmmModel, ModelSpec};
use crate::sampler::{run_chains, summarize_draws, ParamSummary, PosteriorDraws, SamplerConfig};

#[derive(Debug, Clone)]
pub struct Fit {
    pub model: GlmmModel,
    pub draws: PosteriorDraws,
    /// More than the configured fraction of iterations diverged.
    pub failed: bool,
}

pub fn fit_model(spec: ModelSpec, dataset: &CoopDataset, config: &SamplerConfig) -> Result<Fit> {
    let model = GlmmModel::new(spec, dataset)?;
    let draws = run_chains(&model, config)?;
    let failed = draws.divergent_fraction() > config.max_divergent_fraction;
    Ok(Fit {
        model,
        draws,
        failed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub label: String,
    pub model: ModelSpec,
    pub config: SamplerConfig,
    pub chain_seeds: Vec<u64>,
    pub n_rows: usize,
    pub villages: Vec<String>,
    pub failed: bool,
    pub n_divergent: usize,
    pub divergent_fraction: f64,
    pub step_sizes: Vec<f64>,
    pub mean_accept_stat: Vec<f64>,
    pub mean_leapfrog_steps: Vec<f64>,
    pub max_depth_hits: Vec<usize>,
    pub params: Vec<ParamSummary>,
    pub notes: Vec<String>,
}

impl Fit {
    pub fn report(&self, label: &str, config: &SamplerConfig) -> Result<FitReport> {
        Ok(FitReport {
            label: label.to_string(),
            model: self.model.spec().clone(),
            config: *config,
            chain_seeds: self.draws.chain_seeds.clone(),
            n_rows: self.model.design().n_rows(),
            villages: self.model.design().villages.clone(),
            failed: self.failed,
            n_divergent: self.draws.n_divergent(),
            divergent_fraction: self.draws.divergent_fraction(),
            step_sizes: self.draws.step_sizes.clone(),
            mean_accept_stat: self.draws.mean_accept_stat.clone(),
            mean_leapfrog_steps: self.draws.mean_leapfrog_steps.clone(),
            max_depth_hits: self.draws.max_depth_hits.clone(),
            params: summarize_draws(&self.draws)?,
            notes: vec![
                "intervals are central 89% posterior intervals".into(),
                "covariates enter on their raw (unstandardized) scale".into(),
            ],
        })
    }
}
