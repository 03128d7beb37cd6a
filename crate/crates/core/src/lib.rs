//! Multiplex ego-network overlap and Bayesian multilevel models of
//! cooperation.
//!
//! * [`netcore`]: ego-networks and individual / village overlap.
//! * [`datapipe`]: survey ingestion and dataset assembly.
//! * [`glmm`]: ordered-logistic and negative-binomial multilevel models.
//! * [`sampler`]: adaptive NUTS, R-hat, ESS and interval summaries.
//! * [`postfit`]: ICC, PSIS Pareto-k, marginal effects, prediction.
//! * [`synth`]: synthetic datasets and parameter-recovery experiments.

// `!(x > 0.0)` is the NaN-rejecting form used throughout validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datapipe;
pub mod error;
pub mod exec;
pub mod fit;
pub mod glmm;
pub mod netcore;
pub mod postfit;
pub mod rng;
pub mod sampler;
pub mod special;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
