use std::path::Path;

use coopnet::datapipe::DEFAULT_ANNUALIZATION_FACTOR;
use coopnet::glmm::PriorSet;
use coopnet::sampler::SamplerConfig;
use coopnet::Execution;
use serde::{Deserialize, Serialize};

use crate::cli::GlobalArgs;
use crate::error::{CliError, CliResult};

pub const DEFAULT_REPLICATES: usize = 20;

/// Contents of `--config`. Every field is optional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sampler: SamplerConfig,
    pub priors: PriorSet,
    pub execution: Execution,
    pub annualization_factor: u64,
    pub replicates: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sampler: SamplerConfig::default(),
            priors: PriorSet::default(),
            execution: Execution::default(),
            annualization_factor: DEFAULT_ANNUALIZATION_FACTOR,
            replicates: DEFAULT_REPLICATES,
        }
    }
}

impl RunConfig {
    /// File values, then flags (seed: flag, COOPNET_SEED, file, default).
    pub fn resolve(global: &GlobalArgs) -> CliResult<Self> {
        let mut cfg = match &global.config {
            Some(path) => Self::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = global.seed {
            cfg.sampler.seed = seed;
        }
        if let Some(n) = global.chains {
            cfg.sampler.n_chains = n;
        }
        if let Some(n) = global.warmup {
            cfg.sampler.n_warmup = n;
        }
        if let Some(n) = global.draws {
            cfg.sampler.n_draws = n;
        }
        cfg.sampler.execution = cfg.execution;
        cfg.sampler.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.priors.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if cfg.annualization_factor == 0 {
            return Err(CliError::Usage("annualization_factor must be positive".into()));
        }
        Ok(cfg)
    }

    fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}
