//! Gradient-based MCMC: adaptive NUTS chains, diagnostics and summaries.

mod adapt;
pub mod diagnostics;
mod nuts;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use diagnostics::{ess, median, quantile_sorted, rhat, summarize, Interval, DEFAULT_CI_LEVEL};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::rng::{derive_seed, stream};
use adapt::{DualAveraging, WindowSchedule};
use nuts::{Metric, Point};

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    fn logp_and_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    /// Maps an unconstrained position to the reported parameter values.
    fn constrain(&self, position: &[f64]) -> Vec<f64> {
        position.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub seed: u64,
    pub target_acceptance: f64,
    pub max_tree_depth: usize,
    /// Fraction of divergent post-warmup iterations above which a fit is
    /// flagged as failed.
    pub max_divergent_fraction: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 4,
            n_warmup: 1000,
            n_draws: 1000,
            seed: 20_190_101,
            target_acceptance: 0.9,
            max_tree_depth: 10,
            max_divergent_fraction: 0.25,
            execution: Execution::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_draws == 0 || self.max_tree_depth == 0 {
            return Err(Error::Validation(
                "chains, draws and tree depth must be positive".into(),
            ));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Validation(format!(
                "target acceptance must lie in (0, 1), got {}",
                self.target_acceptance
            )));
        }
        if !(0.0..=1.0).contains(&self.max_divergent_fraction) {
            return Err(Error::Validation(format!(
                "max divergent fraction must lie in [0, 1], got {}",
                self.max_divergent_fraction
            )));
        }
        Ok(())
    }
}

/// Post-warmup draws on the constrained scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub param_names: Vec<String>,
    pub n_chains: usize,
    pub n_draws: usize,
    /// `[chain][iteration][parameter]`, flattened.
    pub values: Vec<f64>,
    pub chain_seeds: Vec<u64>,
    /// `[chain][iteration]`, flattened.
    pub divergent: Vec<bool>,
    pub step_sizes: Vec<f64>,
    pub mean_accept_stat: Vec<f64>,
    /// Per chain, post-warmup.
    pub mean_leapfrog_steps: Vec<f64>,
    /// Per chain: post-warmup transitions that hit the tree-depth cap.
    pub max_depth_hits: Vec<usize>,
}

impl PosteriorDraws {
    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_total(&self) -> usize {
        self.n_chains * self.n_draws
    }

    pub fn draw(&self, chain: usize, iteration: usize) -> &[f64] {
        let p = self.n_params();
        let start = (chain * self.n_draws + iteration) * p;
        &self.values[start..start + p]
    }

    /// All draws in chain-major order.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_params().max(1))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    /// Per-chain series for parameter `idx`.
    pub fn chains(&self, idx: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| (0..self.n_draws).map(|i| self.draw(c, i)[idx]).collect())
            .collect()
    }

    pub fn pooled(&self, idx: usize) -> Vec<f64> {
        self.iter_draws().map(|d| d[idx]).collect()
    }

    pub fn pooled_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.index_of(name).map(|i| self.pooled(i))
    }

    pub fn n_divergent(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }

    pub fn divergent_fraction(&self) -> f64 {
        self.n_divergent() as f64 / self.divergent.len().max(1) as f64
    }

    /// `chain,iteration,<params..>` with full-precision values.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(self.param_names.iter().cloned());
        w.write_record(&header)?;
        for c in 0..self.n_chains {
            for i in 0..self.n_draws {
                let mut rec = vec![c.to_string(), i.to_string()];
                rec.extend(self.draw(c, i).iter().map(|v| format!("{v:?}")));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("draws.csv", e))?;
        Ok(())
    }

    /// Reads draws written by [`Self::write_csv`]. Sampler bookkeeping not
    /// present in the file (seeds, divergences) is left empty.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "chain" || &header[1] != "iteration" {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                reason: "header must start with chain,iteration".into(),
            });
        }
        let param_names: Vec<String> = header.iter().skip(2).map(String::from).collect();
        let mut per_chain: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let bad = |reason: String| Error::Parse {
                path: path.display().to_string(),
                line,
                reason,
            };
            let chain: usize = record[0].parse().map_err(|_| bad("bad chain index".into()))?;
            let values = record
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value {v:?}"))))
                .collect::<Result<Vec<_>>>()?;
            per_chain.entry(chain).or_default().push(values);
        }
        let n_chains = per_chain.len();
        let n_draws = per_chain.values().map(Vec::len).min().unwrap_or(0);
        if per_chain.values().any(|c| c.len() != n_draws) {
            return Err(Error::Validation("chains have unequal lengths".into()));
        }
        let values = per_chain.into_values().flatten().flatten().collect();
        Ok(PosteriorDraws {
            param_names,
            n_chains,
            n_draws,
            values,
            chain_seeds: Vec::new(),
            divergent: vec![false; n_chains * n_draws],
            step_sizes: Vec::new(),
            mean_accept_stat: Vec::new(),
            mean_leapfrog_steps: Vec::new(),
            max_depth_hits: Vec::new(),
        })
    }
}

struct ChainOutput {
    draws: Vec<f64>,
    divergent: Vec<bool>,
    step_size: f64,
    mean_accept: f64,
    mean_leapfrog: f64,
    max_depth_hits: usize,
}

const MAX_INIT_ATTEMPTS: usize = 100;

fn initial_point<D: LogDensity + ?Sized, R: Rng>(target: &D, rng: &mut R) -> Result<Point> {
    for _ in 0..MAX_INIT_ATTEMPTS {
        let q: Vec<f64> = (0..target.dim())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let z = Point::at(target, q);
        if z.logp.is_finite() {
            return Ok(z);
        }
    }
    Err(Error::Sampler(format!(
        "non-finite initial log density after {MAX_INIT_ATTEMPTS} attempts"
    )))
}

/// Doubles or halves `eps` until a single leapfrog step crosses an
/// acceptance probability of 0.8.
fn reasonable_step_size<D: LogDensity + ?Sized, R: Rng>(
    target: &D,
    metric: &Metric,
    z: &Point,
    mut eps: f64,
    rng: &mut R,
) -> f64 {
    let log_threshold = 0.8f64.ln();
    let trial = |eps: f64, rng: &mut R| -> f64 {
        let mut zz = z.clone();
        metric.sample_momentum(rng, &mut zz.p);
        let h0 = metric.hamiltonian(&zz);
        nuts::leapfrog(target, metric, &mut zz, eps);
        let h = metric.hamiltonian(&zz);
        h0 - h
    };
    let delta = trial(eps, rng);
    let increase = delta > log_threshold;
    for _ in 0..100 {
        let delta = trial(eps, rng);
        if increase && !(delta > log_threshold) || !increase && !(delta < log_threshold) {
            break;
        }
        let next = if increase { 2.0 * eps } else { 0.5 * eps };
        if !(next > 1e-12 && next < 1e7) {
            break;
        }
        eps = next;
    }
    eps
}

fn run_chain<D: LogDensity + ?Sized>(target: &D, config: &SamplerConfig, seed: u64) -> Result<ChainOutput> {
    let mut rng = stream(seed, 0);
    let dim = target.dim();
    let mut z = initial_point(target, &mut rng)?;
    let mut metric = Metric::unit(dim);
    let mut eps = reasonable_step_size(target, &metric, &z, 1.0, &mut rng);
    let mut da = DualAveraging::new(config.target_acceptance);
    da.restart(eps);
    let mut schedule = WindowSchedule::new(config.n_warmup, dim);

    for it in 0..config.n_warmup {
        let (next, info) = nuts::transition(target, &metric, eps, config.max_tree_depth, &z, &mut rng);
        z = next;
        eps = da.learn(info.accept_stat);
        if let Some(inv_mass) = schedule.observe(&z.q) {
            metric = Metric { inv_mass };
            eps = reasonable_step_size(target, &metric, &z, eps, &mut rng);
            da.restart(eps);
        }
        if it + 1 == config.n_warmup {
            eps = da.final_step_size();
        }
    }

    let n_params = target.param_names().len();
    let mut draws = Vec::with_capacity(config.n_draws * n_params);
    let mut divergent = Vec::with_capacity(config.n_draws);
    let mut accept_sum = 0.0;
    let mut leapfrog_sum = 0usize;
    let mut max_depth_hits = 0;
    for _ in 0..config.n_draws {
        let (next, info) = nuts::transition(target, &metric, eps, config.max_tree_depth, &z, &mut rng);
        z = next;
        accept_sum += info.accept_stat;
        leapfrog_sum += info.n_leapfrog;
        max_depth_hits += usize::from(info.depth >= config.max_tree_depth);
        divergent.push(info.divergent);
        draws.extend(target.constrain(&z.q));
    }
    Ok(ChainOutput {
        draws,
        divergent,
        step_size: eps,
        mean_accept: accept_sum / config.n_draws as f64,
        mean_leapfrog: leapfrog_sum as f64 / config.n_draws as f64,
        max_depth_hits,
    })
}

/// Runs `config.n_chains` independent chains. Chain `c` is seeded from
/// `(config.seed, c)` so draws do not depend on the execution mode.
pub fn run_chains<D: LogDensity + ?Sized>(target: &D, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.n_chains)
        .map(|c| derive_seed(config.seed, c as u64))
        .collect();
    let outputs = map_indexed(config.n_chains, config.execution, |c| {
        run_chain(target, config, seeds[c])
    });
    let mut values = Vec::new();
    let mut divergent = Vec::new();
    let mut step_sizes = Vec::new();
    let mut mean_accept_stat = Vec::new();
    let mut mean_leapfrog_steps = Vec::new();
    let mut max_depth_hits = Vec::new();
    for out in outputs {
        let out = out?;
        values.extend(out.draws);
        divergent.extend(out.divergent);
        step_sizes.push(out.step_size);
        mean_accept_stat.push(out.mean_accept);
        mean_leapfrog_steps.push(out.mean_leapfrog);
        max_depth_hits.push(out.max_depth_hits);
    }
    Ok(PosteriorDraws {
        param_names: target.param_names(),
        n_chains: config.n_chains,
        n_draws: config.n_draws,
        values,
        chain_seeds: seeds,
        divergent,
        step_sizes,
        mean_accept_stat,
        mean_leapfrog_steps,
        max_depth_hits,
    })
}

/// One row of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub ci89_lower: f64,
    pub ci89_upper: f64,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    pub n_divergent: usize,
}

pub fn summarize_draws(draws: &PosteriorDraws) -> Result<Vec<ParamSummary>> {
    let n_div = draws.n_divergent();
    draws
        .param_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let interval = summarize(&draws.pooled(i), DEFAULT_CI_LEVEL)?;
            let chains = draws.chains(i);
            Ok(ParamSummary {
                name: name.clone(),
                mean: interval.mean,
                ci89_lower: interval.lower,
                ci89_upper: interval.upper,
                rhat: rhat(&chains).ok(),
                ess: ess(&chains).ok(),
                n_divergent: n_div,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn logp_and_grad(&self, x: &[f64], g: &mut [f64]) -> Result<f64> {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = -xi;
            }
            Ok(-0.5 * x.iter().map(|v| v * v).sum::<f64>())
        }
    }

    fn quick() -> SamplerConfig {
        SamplerConfig {
            n_chains: 2,
            n_warmup: 200,
            n_draws: 200,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_mode_independent() {
        let a = run_chains(&StdNormal(3), &quick()).unwrap();
        let b = run_chains(&StdNormal(3), &quick()).unwrap();
        let c = run_chains(
            &StdNormal(3),
            &SamplerConfig {
                execution: Execution::Sequential,
                ..quick()
            },
        )
        .unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.values, c.values);
        let d = run_chains(&StdNormal(3), &SamplerConfig { seed: 10, ..quick() }).unwrap();
        assert_ne!(a.values, d.values);
    }

    #[test]
    fn draws_csv_round_trip() {
        let draws = run_chains(&StdNormal(2), &quick()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.csv");
        draws.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
        let back = PosteriorDraws::read_csv(&path).unwrap();
        assert_eq!(back.values, draws.values);
        assert_eq!(back.param_names, draws.param_names);
        assert_eq!(back.n_chains, 2);
    }

    struct Broken;
    impl LogDensity for Broken {
        fn dim(&self) -> usize {
            1
        }
        fn logp_and_grad(&self, _: &[f64], _: &mut [f64]) -> Result<f64> {
            Ok(f64::NAN)
        }
    }

    #[test]
    fn unusable_initial_values() {
        let err = run_chains(&Broken, &quick()).unwrap_err();
        assert!(err.to_string().contains("non-finite initial"));
    }

    #[test]
    fn bad_config() {
        let cfg = SamplerConfig {
            target_acceptance: 1.0,
            ..quick()
        };
        assert!(run_chains(&StdNormal(1), &cfg).is_err());
    }
}
