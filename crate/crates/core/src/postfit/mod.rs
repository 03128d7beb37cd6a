//! Post-fit analyses on posterior draws.

mod icc;
mod predict;
mod psis;

pub use icc::{
    icc_from_draws, icc_negbin, icc_ordinal, negbin_level1_variance, IccPoint, IccReport,
    PosteriorSummary, LATENT_LOGISTIC_VARIANCE,
};
pub use predict::{
    linspace, marginal_effect, pointwise_loglik, posterior_predict, MarginalCurve, MarginalPoint,
};
pub(crate) use predict::{sample_category, sample_negbin};
pub use psis::{gpd_fit, pareto_k, psis_pareto_k, LoglikMatrix, ParetoKReport, K_THRESHOLD, TAIL_FRACTION};
