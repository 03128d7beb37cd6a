//! Synthetic datasets from known parameters and parameter-recovery runs.
//!
//! Overlap values are drawn directly: each village gets a Beta distribution
//! whose mean is spread evenly over `[village_mean_low, village_mean_high]`.
//! These ranges are a stand-in; no empirical overlap distribution is
//! available.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datapipe::{CoopDataset, CoopRow, Covariate, Outcome, DEFAULT_ANNUALIZATION_FACTOR};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::fit::fit_model;
use crate::glmm::{ordinal_probs_unchecked, Family, ModelSpec, PriorSet};
use crate::postfit::{sample_category, sample_negbin};
use crate::rng::{derive_seed, stream};
use crate::sampler::{rhat, summarize, SamplerConfig, DEFAULT_CI_LEVEL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrueFamily {
    NegativeBinomial { intercept: f64, theta: f64 },
    OrderedLogistic { cutpoints: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapSpec {
    pub village_mean_low: f64,
    pub village_mean_high: f64,
    /// Beta concentration `a + b` within a village.
    pub concentration: f64,
}

impl Default for OverlapSpec {
    fn default() -> Self {
        OverlapSpec {
            village_mean_low: 0.15,
            village_mean_high: 0.45,
            concentration: 14.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub family: TrueFamily,
    pub outcome: Outcome,
    pub b_overlap_i: f64,
    pub b_overlap_v: f64,
    /// Coefficient on village size in hundreds of residents, when modeled.
    pub b_size: Option<f64>,
    pub sigma_village: f64,
    pub n_villages: usize,
    pub per_village_n: usize,
    pub overlap: OverlapSpec,
    pub village_size_range: (f64, f64),
    pub notes: Vec<String>,
}

const STAND_IN_NOTE: &str =
    "overlap distributions, intercept/cutpoints and theta are synthetic stand-ins";

impl TrueParams {
    fn table_row(family: TrueFamily, outcome: Outcome, b1: f64, b2: f64, sigma: f64) -> Self {
        TrueParams {
            family,
            outcome,
            b_overlap_i: b1,
            b_overlap_v: b2,
            b_size: None,
            sigma_village: sigma,
            n_villages: 8,
            per_village_n: 28,
            overlap: OverlapSpec::default(),
            village_size_range: (150.0, 450.0),
            notes: vec![STAND_IN_NOTE.into()],
        }
    }

    /// Yearly mayu counts; coefficients and village SD from the published
    /// estimates, intercept chosen for a mean near 8 events at overlap 0.3.
    pub fn mayu_default() -> Self {
        Self::table_row(
            TrueFamily::NegativeBinomial {
                intercept: -6.0,
                theta: 2.0,
            },
            Outcome::Mayu,
            2.53,
            24.35,
            0.49,
        )
    }

    pub fn dictator_default() -> Self {
        Self::table_row(
            TrueFamily::OrderedLogistic {
                cutpoints: vec![-8.8, -7.6, -6.6, -5.6, -4.6],
            },
            Outcome::Dg,
            -2.83,
            -23.10,
            0.27,
        )
    }

    pub fn ultimatum_default() -> Self {
        Self::table_row(
            TrueFamily::OrderedLogistic {
                cutpoints: vec![-8.5, -7.5, -6.5, -5.5, -3.5],
            },
            Outcome::Ug,
            -1.16,
            -18.77,
            0.49,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("invalid truth: {m}")));
        if self.n_villages == 0 || self.per_village_n == 0 {
            return bad("need at least one village and one person per village");
        }
        if !(self.sigma_village >= 0.0) {
            return bad("sigma_village must be nonnegative");
        }
        let o = &self.overlap;
        if !(0.0 < o.village_mean_low
            && o.village_mean_low <= o.village_mean_high
            && o.village_mean_high < 1.0
            && o.concentration > 0.0)
        {
            return bad("overlap means must lie in (0, 1) with positive concentration");
        }
        match (&self.family, self.outcome) {
            (TrueFamily::NegativeBinomial { theta, .. }, Outcome::Mayu) => {
                if !(*theta > 0.0) {
                    return bad("theta must be positive");
                }
            }
            (TrueFamily::OrderedLogistic { cutpoints }, Outcome::Dg | Outcome::Ug) => {
                if cutpoints.is_empty() || cutpoints.windows(2).any(|w| !(w[0] < w[1])) {
                    return bad("cutpoints must be nonempty and strictly increasing");
                }
                if cutpoints.len() + 1 > 6 {
                    return bad("offer outcomes have at most 6 categories");
                }
            }
            _ => return bad("family does not match outcome"),
        }
        Ok(())
    }

    pub fn covariates(&self) -> Vec<Covariate> {
        let mut c = vec![Covariate::OverlapIndividual, Covariate::OverlapVillage];
        if self.b_size.is_some() {
            c.push(Covariate::VillageSize);
        }
        c
    }

    /// The model that generated the data.
    pub fn model_spec(&self) -> ModelSpec {
        let family = match &self.family {
            TrueFamily::NegativeBinomial { .. } => Family::NegativeBinomial,
            TrueFamily::OrderedLogistic { cutpoints } => Family::OrderedLogistic {
                n_categories: cutpoints.len() + 1,
            },
        };
        ModelSpec::new(family, self.outcome, self.covariates())
    }

    /// Truth keyed by draw-parameter name.
    pub fn named_values(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        match &self.family {
            TrueFamily::NegativeBinomial { intercept, theta } => {
                out.insert("intercept".into(), *intercept);
                out.insert("theta".into(), *theta);
            }
            TrueFamily::OrderedLogistic { cutpoints } => {
                for (i, c) in cutpoints.iter().enumerate() {
                    out.insert(format!("cutpoint[{}]", i + 1), *c);
                }
            }
        }
        out.insert("b_overlap_i".into(), self.b_overlap_i);
        out.insert("b_overlap_V".into(), self.b_overlap_v);
        if let Some(b) = self.b_size {
            out.insert("b_size_V".into(), b);
        }
        out.insert("sigma_village".into(), self.sigma_village);
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let truth: TrueParams = serde_json::from_str(&text)?;
        truth.validate()?;
        Ok(truth)
    }
}

pub fn village_id(index: usize) -> String {
    format!("V{:02}", index + 1)
}

/// Simulates one dataset. Deterministic in `(truth, seed)`.
pub fn generate_dataset(truth: &TrueParams, seed: u64) -> Result<CoopDataset> {
    truth.validate()?;
    let mut rng = stream(seed, 0);
    let n_v = truth.n_villages;
    let effects: Vec<f64> = (0..n_v)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            truth.sigma_village * z
        })
        .collect();
    let (size_lo, size_hi) = truth.village_size_range;
    let sizes: Vec<Option<f64>> = (0..n_v)
        .map(|_| {
            truth
                .b_size
                .map(|_| (size_lo + (size_hi - size_lo) * rng.random::<f64>()).round())
        })
        .collect();

    let o = &truth.overlap;
    let mut overlaps: Vec<Vec<f64>> = Vec::with_capacity(n_v);
    for v in 0..n_v {
        let mean = if n_v == 1 {
            0.5 * (o.village_mean_low + o.village_mean_high)
        } else {
            o.village_mean_low + (o.village_mean_high - o.village_mean_low) * v as f64 / (n_v - 1) as f64
        };
        let beta = Beta::new(mean * o.concentration, (1.0 - mean) * o.concentration)
            .map_err(|e| Error::Validation(e.to_string()))?;
        overlaps.push((0..truth.per_village_n).map(|_| beta.sample(&mut rng)).collect());
    }

    let mut rows = Vec::with_capacity(n_v * truth.per_village_n);
    for v in 0..n_v {
        let village_mean = overlaps[v].iter().sum::<f64>() / overlaps[v].len() as f64;
        for (i, &x_i) in overlaps[v].iter().enumerate() {
            let mut eta = effects[v] + truth.b_overlap_i * x_i + truth.b_overlap_v * village_mean;
            if let (Some(b), Some(size)) = (truth.b_size, sizes[v]) {
                eta += b * size / crate::datapipe::VILLAGE_SIZE_SCALE;
            }
            let mut row = CoopRow {
                person_id: format!("{}-P{:03}", village_id(v), i + 1),
                village_id: village_id(v),
                overlap_i: x_i,
                overlap_undefined: false,
                overlap_v: village_mean,
                village_size: sizes[v],
                dg_category: None,
                ug_category: None,
                mayu_yearly: None,
                dg_offer_gyd: None,
                ug_offer_gyd: None,
                mayu_per_month: None,
                mayu_per_year: None,
            };
            match &truth.family {
                TrueFamily::NegativeBinomial { intercept, theta } => {
                    let y = sample_negbin((eta + intercept).exp(), *theta, &mut rng)?;
                    row.mayu_yearly = Some(y);
                    row.mayu_per_year = Some(y);
                }
                TrueFamily::OrderedLogistic { cutpoints } => {
                    let c = sample_category(&ordinal_probs_unchecked(eta, cutpoints), &mut rng) as u8;
                    let offer = Some(u32::from(c) * 100);
                    if truth.outcome == Outcome::Dg {
                        row.dg_category = Some(c);
                        row.dg_offer_gyd = offer;
                    } else {
                        row.ug_category = Some(c);
                        row.ug_offer_gyd = offer;
                    }
                }
            }
            rows.push(row);
        }
    }
    Ok(CoopDataset::from_rows(
        rows,
        DEFAULT_ANNUALIZATION_FACTOR,
        vec![
            "synthetic dataset; overlap values drawn directly from per-village Beta distributions".into(),
            format!("generator seed {seed}"),
        ],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub sampler: SamplerConfig,
    pub priors: PriorSet,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub median: f64,
    pub ci89_lower: f64,
    pub ci89_upper: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub failed: bool,
    pub error: Option<String>,
    pub n_divergent: usize,
    pub max_rhat: Option<f64>,
    pub estimates: Vec<ReplicateEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub name: String,
    pub truth: f64,
    pub n_used: usize,
    pub coverage: f64,
    pub mean_bias: f64,
    pub mean_ci_width: f64,
    /// Replicates whose posterior mean has the sign of the truth.
    pub sign_agreement: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub truth: TrueParams,
    pub config: RecoveryConfig,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub level: f64,
    pub coverage: Vec<CoverageRow>,
    pub replicates: Vec<ReplicateResult>,
}

impl RecoveryReport {
    pub fn row(&self, name: &str) -> Option<&CoverageRow> {
        self.coverage.iter().find(|r| r.name == name)
    }
}

/// Simulates and refits one replicate.
pub fn run_replicate(
    truth: &TrueParams,
    config: &RecoveryConfig,
    replicate: usize,
) -> ReplicateResult {
    let seed = derive_seed(config.seed, replicate as u64);
    let mut result = ReplicateResult {
        replicate,
        seed,
        failed: true,
        error: None,
        n_divergent: 0,
        max_rhat: None,
        estimates: Vec::new(),
    };
    let outcome = (|| -> Result<()> {
        let dataset = generate_dataset(truth, seed)?;
        let spec = truth.model_spec().with_priors(config.priors);
        let sampler = SamplerConfig {
            seed: derive_seed(seed, 1),
            ..config.sampler
        };
        let fit = fit_model(spec, &dataset, &sampler)?;
        result.failed = fit.failed;
        result.n_divergent = fit.draws.n_divergent();
        for (name, value) in truth.named_values() {
            let idx = fit
                .draws
                .index_of(&name)
                .ok_or_else(|| Error::Model(format!("fit lacks parameter {name}")))?;
            let pooled = fit.draws.pooled(idx);
            let iv = summarize(&pooled, DEFAULT_CI_LEVEL)?;
            if let Ok(r) = rhat(&fit.draws.chains(idx)) {
                result.max_rhat = Some(result.max_rhat.map_or(r, |m: f64| m.max(r)));
            }
            result.estimates.push(ReplicateEstimate {
                name,
                truth: value,
                mean: iv.mean,
                median: crate::sampler::median(&pooled),
                ci89_lower: iv.lower,
                ci89_upper: iv.upper,
                covered: iv.lower <= value && value <= iv.upper,
            });
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        result.failed = true;
        result.error = Some(e.to_string());
    }
    result
}

/// Coverage and bias of 89% intervals over `n_replicates` simulate-and-fit
/// rounds. Failed replicates are counted and excluded from the table.
pub fn recovery_experiment(
    truth: &TrueParams,
    n_replicates: usize,
    config: &RecoveryConfig,
) -> Result<RecoveryReport> {
    truth.validate()?;
    config.sampler.validate()?;
    config.priors.validate()?;
    if n_replicates < 10 {
        return Err(Error::Validation(format!(
            "recovery needs at least 10 replicates, got {n_replicates}"
        )));
    }
    let replicates = map_indexed(n_replicates, config.execution, |r| {
        run_replicate(truth, config, r)
    });
    let used: Vec<&ReplicateResult> = replicates.iter().filter(|r| !r.failed).collect();
    let coverage = truth
        .named_values()
        .into_iter()
        .map(|(name, value)| {
            let ests: Vec<&ReplicateEstimate> = used
                .iter()
                .filter_map(|r| r.estimates.iter().find(|e| e.name == name))
                .collect();
            let n = ests.len().max(1) as f64;
            CoverageRow {
                truth: value,
                n_used: ests.len(),
                coverage: ests.iter().filter(|e| e.covered).count() as f64 / n,
                mean_bias: ests.iter().map(|e| e.mean - value).sum::<f64>() / n,
                mean_ci_width: ests.iter().map(|e| e.ci89_upper - e.ci89_lower).sum::<f64>() / n,
                sign_agreement: ests
                    .iter()
                    .filter(|e| e.mean.signum() == value.signum())
                    .count(),
                name,
            }
        })
        .collect();
    Ok(RecoveryReport {
        truth: truth.clone(),
        config: *config,
        n_replicates,
        n_failed: replicates.len() - used.len(),
        level: DEFAULT_CI_LEVEL,
        coverage,
        replicates,
    })
}
