use std::collections::BTreeMap;

use super::{negbin_term, ordinal_term, Family, ModelSpec, NegBinParams, OrderedLogisticParams, Params};
use crate::datapipe::CoopDataset;
use crate::error::{Error, Result};
use crate::sampler::LogDensity;
use crate::special::{gamma_lpdf, ln_gamma, normal_lpdf, student_t_lpdf};

/// Rows of a dataset compiled for one model: only rows with the model's
/// outcome observed are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    /// Sorted village ids; index `j` owns village effect `j`.
    pub villages: Vec<String>,
    pub person_ids: Vec<String>,
    pub village_index: Vec<usize>,
    /// Row-major `n_rows x n_covariates`.
    pub x: Vec<f64>,
    pub y: Vec<u64>,
    pub n_covariates: usize,
    /// Column means of `x`; the sampler works on a centred intercept.
    pub covariate_means: Vec<f64>,
    ln_fact_y: Vec<f64>,
}

impl Design {
    pub fn new(spec: &ModelSpec, dataset: &CoopDataset) -> Result<Self> {
        spec.validate()?;
        let used: Vec<_> = dataset
            .rows
            .iter()
            .filter(|r| r.outcome(spec.outcome).is_some())
            .collect();
        let villages: Vec<String> = used
            .iter()
            .map(|r| r.village_id.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let lookup: BTreeMap<&str, usize> = villages
            .iter()
            .enumerate()
            .map(|(j, v)| (v.as_str(), j))
            .collect();
        let p = spec.fixed_effects.len();
        let mut x = Vec::with_capacity(used.len() * p);
        let mut y = Vec::with_capacity(used.len());
        for row in &used {
            for cov in &spec.fixed_effects {
                let value = row.covariate(*cov).ok_or_else(|| {
                    Error::Validation(format!(
                        "row {:?} is missing covariate {cov}",
                        row.person_id
                    ))
                })?;
                if !value.is_finite() {
                    return Err(Error::Validation(format!(
                        "row {:?}: covariate {cov} is not finite",
                        row.person_id
                    )));
                }
                x.push(value);
            }
            let outcome = row.outcome(spec.outcome).expect("filtered above");
            if let Family::OrderedLogistic { n_categories } = spec.family {
                if outcome as usize >= n_categories {
                    return Err(Error::Validation(format!(
                        "row {:?}: category {outcome} outside 0..{n_categories}",
                        row.person_id
                    )));
                }
            }
            y.push(outcome);
        }
        let n = used.len();
        let covariate_means = (0..p)
            .map(|k| {
                if n == 0 {
                    0.0
                } else {
                    (0..n).map(|i| x[i * p + k]).sum::<f64>() / n as f64
                }
            })
            .collect();
        Ok(Design {
            person_ids: used.iter().map(|r| r.person_id.clone()).collect(),
            village_index: used.iter().map(|r| lookup[r.village_id.as_str()]).collect(),
            ln_fact_y: y.iter().map(|&v| ln_gamma(v as f64 + 1.0)).collect(),
            villages,
            x,
            y,
            n_covariates: p,
            covariate_means,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_villages(&self) -> usize {
        self.villages.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_covariates..(i + 1) * self.n_covariates]
    }

    pub fn outcome_mean(&self) -> Option<f64> {
        (!self.y.is_empty()).then(|| self.y.iter().sum::<u64>() as f64 / self.y.len() as f64)
    }
}

/// Gradient with respect to the constrained parameters.
#[derive(Debug, Clone, Default)]
struct ConstrainedGrad {
    intercept: f64,
    cutpoints: Vec<f64>,
    betas: Vec<f64>,
    village: Vec<f64>,
    sigma: f64,
    theta: f64,
}

/// A multilevel model bound to its data.
///
/// The unconstrained vector is laid out as
/// `[offset.., betas.., z_V.., log sigma, (log theta)]`, where `offset` is
/// the centred intercept (count model) or the ordered-cutpoint increments
/// (ordinal model), and `a_V = sigma * z_V`.
#[derive(Debug, Clone)]
pub struct GlmmModel {
    spec: ModelSpec,
    design: Design,
}

impl GlmmModel {
    pub fn new(spec: ModelSpec, dataset: &CoopDataset) -> Result<Self> {
        let design = Design::new(&spec, dataset)?;
        Ok(GlmmModel { spec, design })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    fn n_offset(&self) -> usize {
        match self.spec.family {
            Family::OrderedLogistic { n_categories } => n_categories - 1,
            Family::NegativeBinomial => 1,
        }
    }

    fn is_negbin(&self) -> bool {
        matches!(self.spec.family, Family::NegativeBinomial)
    }

    fn shift(&self, betas: &[f64]) -> f64 {
        betas
            .iter()
            .zip(&self.design.covariate_means)
            .map(|(b, m)| b * m)
            .sum()
    }

    pub fn n_unconstrained(&self) -> usize {
        self.n_offset()
            + self.spec.fixed_effects.len()
            + self.design.n_villages()
            + 1
            + usize::from(self.is_negbin())
    }

    pub fn constrain_params(&self, u: &[f64]) -> Params {
        let n_off = self.n_offset();
        let p = self.spec.fixed_effects.len();
        let j = self.design.n_villages();
        let betas = u[n_off..n_off + p].to_vec();
        let z = &u[n_off + p..n_off + p + j];
        let sigma = u[n_off + p + j].exp();
        let village_effects = z.iter().map(|z| sigma * z).collect();
        let shift = self.shift(&betas);
        if self.is_negbin() {
            Params::NegBin(NegBinParams {
                intercept: u[0] - shift,
                betas,
                village_effects,
                sigma_village: sigma,
                theta: u[n_off + p + j + 1].exp(),
            })
        } else {
            let mut cutpoints = Vec::with_capacity(n_off);
            let mut acc = 0.0;
            for (i, v) in u[..n_off].iter().enumerate() {
                acc = if i == 0 { *v } else { acc + v.exp() };
                cutpoints.push(acc + shift);
            }
            Params::OrderedLogistic(OrderedLogisticParams {
                cutpoints,
                betas,
                village_effects,
                sigma_village: sigma,
            })
        }
    }

    pub fn unconstrain(&self, params: &Params) -> Result<Vec<f64>> {
        params.validate(&self.spec, self.design.n_villages())?;
        let sigma = params.sigma_village();
        let shift = self.shift(params.betas());
        let mut u = Vec::with_capacity(self.n_unconstrained());
        match params {
            Params::NegBin(p) => u.push(p.intercept + shift),
            Params::OrderedLogistic(p) => {
                for (i, c) in p.cutpoints.iter().enumerate() {
                    if i == 0 {
                        u.push(c - shift);
                    } else {
                        u.push((c - p.cutpoints[i - 1]).ln());
                    }
                }
            }
        }
        u.extend_from_slice(params.betas());
        u.extend(params.village_effects().iter().map(|a| a / sigma));
        u.push(sigma.ln());
        if let Params::NegBin(p) = params {
            u.push(p.theta.ln());
        }
        Ok(u)
    }

    /// `log |d constrain / d u|`.
    pub fn log_abs_det_jacobian(&self, u: &[f64]) -> f64 {
        let n_off = self.n_offset();
        let p = self.spec.fixed_effects.len();
        let j = self.design.n_villages();
        let log_sigma = u[n_off + p + j];
        let mut total = (j as f64 + 1.0) * log_sigma;
        if self.is_negbin() {
            total += u[n_off + p + j + 1];
        } else {
            total += u[1..n_off].iter().sum::<f64>();
        }
        total
    }

    /// Log posterior on the constrained scale (up to a constant), with the
    /// village effects scored under `Normal(0, sigma_village)`.
    pub fn log_posterior(&self, params: &Params) -> Result<f64> {
        params.validate(&self.spec, self.design.n_villages())?;
        self.evaluate(params, None)
    }

    /// Log-likelihood of each design row.
    pub fn pointwise_loglik(&self, params: &Params) -> Result<Vec<f64>> {
        params.validate(&self.spec, self.design.n_villages())?;
        (0..self.design.n_rows())
            .map(|i| {
                let (lp, _) = self.row_term(params, i);
                if lp.is_finite() {
                    Ok(lp)
                } else {
                    Err(self.non_finite_row(i))
                }
            })
            .collect()
    }

    pub fn log_likelihood(&self, params: &Params) -> Result<f64> {
        Ok(self.pointwise_loglik(params)?.iter().sum())
    }

    fn non_finite_row(&self, i: usize) -> Error {
        Error::NonFinite {
            location: format!("row {i} (person {:?})", self.design.person_ids[i]),
        }
    }

    fn eta(&self, params: &Params, i: usize) -> f64 {
        let d = &self.design;
        let mut eta = params.village_effects()[d.village_index[i]] + params.intercept().unwrap_or(0.0);
        for (b, x) in params.betas().iter().zip(d.row(i)) {
            eta += b * x;
        }
        eta
    }

    /// Log-likelihood of row `i` and its derivative in eta.
    fn row_term(&self, params: &Params, i: usize) -> (f64, f64) {
        let eta = self.eta(params, i);
        let y = self.design.y[i];
        match params {
            Params::NegBin(p) => {
                let (lp, t) = negbin_term(y, self.design.ln_fact_y[i], eta, p.theta);
                (lp, t.d_eta)
            }
            Params::OrderedLogistic(p) => {
                let (lp, t) = ordinal_term(y as usize, eta, &p.cutpoints);
                (lp, t.d_eta)
            }
        }
    }

    fn evaluate(&self, params: &Params, mut grad: Option<&mut ConstrainedGrad>) -> Result<f64> {
        let d = &self.design;
        let pri = &self.spec.priors;
        let nu = pri.student_t_dof;
        let mut total = 0.0;

        for i in 0..d.n_rows() {
            let eta = self.eta(params, i);
            let (lp, d_eta) = match params {
                Params::NegBin(p) => {
                    let (lp, t) = negbin_term(d.y[i], d.ln_fact_y[i], eta, p.theta);
                    if let Some(g) = grad.as_deref_mut() {
                        g.theta += t.d_theta;
                        g.intercept += t.d_eta;
                    }
                    (lp, t.d_eta)
                }
                Params::OrderedLogistic(p) => {
                    let c = d.y[i] as usize;
                    let (lp, t) = ordinal_term(c, eta, &p.cutpoints);
                    if let Some(g) = grad.as_deref_mut() {
                        if c > 0 {
                            g.cutpoints[c - 1] += t.d_lower;
                        }
                        if c < p.cutpoints.len() {
                            g.cutpoints[c] += t.d_upper;
                        }
                    }
                    (lp, t.d_eta)
                }
            };
            if !lp.is_finite() {
                return Err(self.non_finite_row(i));
            }
            total += lp;
            if let Some(g) = grad.as_deref_mut() {
                for (gb, x) in g.betas.iter_mut().zip(d.row(i)) {
                    *gb += d_eta * x;
                }
                g.village[d.village_index[i]] += d_eta;
            }
        }

        for (k, b) in params.betas().iter().enumerate() {
            let (lp, db) = normal_lpdf(*b, 0.0, pri.beta_scale);
            total += lp;
            if let Some(g) = grad.as_deref_mut() {
                g.betas[k] += db;
            }
        }
        match params {
            Params::NegBin(p) => {
                let (lp, di) = student_t_lpdf(p.intercept, nu, 0.0, pri.intercept_scale);
                let (lt, dt) = gamma_lpdf(p.theta, pri.theta_shape, pri.theta_rate);
                total += lp + lt;
                if let Some(g) = grad.as_deref_mut() {
                    g.intercept += di;
                    g.theta += dt;
                }
            }
            Params::OrderedLogistic(p) => {
                for (c, tau) in p.cutpoints.iter().enumerate() {
                    let (lp, dc) = student_t_lpdf(*tau, nu, 0.0, pri.intercept_scale);
                    total += lp;
                    if let Some(g) = grad.as_deref_mut() {
                        g.cutpoints[c] += dc;
                    }
                }
            }
        }
        let sigma = params.sigma_village();
        let (ls, dsig) = student_t_lpdf(sigma, nu, 0.0, pri.sigma_scale);
        total += std::f64::consts::LN_2 + ls;
        if let Some(g) = grad.as_deref_mut() {
            g.sigma += dsig;
        }
        for (j, a) in params.village_effects().iter().enumerate() {
            let (la, da) = normal_lpdf(*a, 0.0, sigma);
            total += la;
            if let Some(g) = grad.as_deref_mut() {
                g.village[j] += da;
                g.sigma += a * a / (sigma * sigma * sigma) - 1.0 / sigma;
            }
        }

        if !total.is_finite() {
            return Err(Error::NonFinite {
                location: "prior terms".into(),
            });
        }
        Ok(total)
    }

    /// Unconstrained log density (log posterior plus log-Jacobian).
    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        self.check_dim(u)?;
        let params = self.constrain_params(u);
        Ok(self.evaluate(&params, None)? + self.log_abs_det_jacobian(u))
    }

    pub fn log_density_and_grad(&self, u: &[f64], out: &mut [f64]) -> Result<f64> {
        self.check_dim(u)?;
        if out.len() != u.len() {
            return Err(Error::Validation("gradient buffer has the wrong length".into()));
        }
        let params = self.constrain_params(u);
        let n_off = self.n_offset();
        let p = self.spec.fixed_effects.len();
        let j = self.design.n_villages();
        let mut g = ConstrainedGrad {
            cutpoints: vec![0.0; self.spec.n_cutpoints()],
            betas: vec![0.0; p],
            village: vec![0.0; j],
            ..Default::default()
        };
        let lp = self.evaluate(&params, Some(&mut g))? + self.log_abs_det_jacobian(u);

        let means = &self.design.covariate_means;
        match &params {
            Params::NegBin(_) => {
                out[0] = g.intercept;
                for k in 0..p {
                    out[n_off + k] = g.betas[k] - means[k] * g.intercept;
                }
            }
            Params::OrderedLogistic(_) => {
                // tau_c = u_0 + sum_{1 <= i <= c} exp(u_i) + shift
                let mut tail = 0.0;
                for c in (0..n_off).rev() {
                    tail += g.cutpoints[c];
                    out[c] = if c == 0 { tail } else { tail * u[c].exp() + 1.0 };
                }
                let total_cut: f64 = g.cutpoints.iter().sum();
                for k in 0..p {
                    out[n_off + k] = g.betas[k] + means[k] * total_cut;
                }
            }
        }
        let sigma = params.sigma_village();
        let z = &u[n_off + p..n_off + p + j];
        let mut d_log_sigma = sigma * g.sigma + j as f64 + 1.0;
        for v in 0..j {
            out[n_off + p + v] = sigma * g.village[v];
            d_log_sigma += sigma * z[v] * g.village[v];
        }
        out[n_off + p + j] = d_log_sigma;
        if let Params::NegBin(nb) = &params {
            out[n_off + p + j + 1] = nb.theta * g.theta + 1.0;
        }
        Ok(lp)
    }

    fn check_dim(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.n_unconstrained() {
            return Err(Error::Validation(format!(
                "expected {} unconstrained parameters, got {}",
                self.n_unconstrained(),
                u.len()
            )));
        }
        Ok(())
    }

    /// Names of the constrained draws, in the order of [`Self::flatten`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        match self.spec.family {
            Family::NegativeBinomial => names.push("intercept".to_string()),
            Family::OrderedLogistic { n_categories } => {
                names.extend((1..n_categories).map(|c| format!("cutpoint[{c}]")));
            }
        }
        names.extend(self.spec.fixed_effects.iter().map(|c| format!("b_{}", c.name())));
        names.push("sigma_village".into());
        if self.is_negbin() {
            names.push("theta".into());
        }
        names.extend(self.design.villages.iter().map(|v| format!("a_village[{v}]")));
        names
    }

    pub fn flatten(&self, params: &Params) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_unconstrained());
        match params {
            Params::NegBin(p) => out.push(p.intercept),
            Params::OrderedLogistic(p) => out.extend_from_slice(&p.cutpoints),
        }
        out.extend_from_slice(params.betas());
        out.push(params.sigma_village());
        if let Params::NegBin(p) = params {
            out.push(p.theta);
        }
        out.extend_from_slice(params.village_effects());
        out
    }

    /// Inverse of [`Self::flatten`].
    pub fn unflatten(&self, draw: &[f64]) -> Result<Params> {
        if draw.len() != self.n_unconstrained() {
            return Err(Error::Validation(format!(
                "expected {} constrained values, got {}",
                self.n_unconstrained(),
                draw.len()
            )));
        }
        let n_off = self.n_offset();
        let p = self.spec.fixed_effects.len();
        let betas = draw[n_off..n_off + p].to_vec();
        let sigma_village = draw[n_off + p];
        let params = if self.is_negbin() {
            Params::NegBin(NegBinParams {
                intercept: draw[0],
                betas,
                sigma_village,
                theta: draw[n_off + p + 1],
                village_effects: draw[n_off + p + 2..].to_vec(),
            })
        } else {
            Params::OrderedLogistic(OrderedLogisticParams {
                cutpoints: draw[..n_off].to_vec(),
                betas,
                sigma_village,
                village_effects: draw[n_off + p + 1..].to_vec(),
            })
        };
        Ok(params)
    }
}

impl LogDensity for GlmmModel {
    fn dim(&self) -> usize {
        self.n_unconstrained()
    }

    fn logp_and_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.log_density_and_grad(position, grad)
    }

    fn param_names(&self) -> Vec<String> {
        GlmmModel::param_names(self)
    }

    fn constrain(&self, position: &[f64]) -> Vec<f64> {
        self.flatten(&self.constrain_params(position))
    }
}

/// Constrained-scale log posterior of `params` for `spec` on `dataset`.
pub fn log_posterior(params: &Params, dataset: &CoopDataset, spec: &ModelSpec) -> Result<f64> {
    GlmmModel::new(spec.clone(), dataset)?.log_posterior(params)
}

/// Gradient of the unconstrained log density at `u`.
pub fn grad_log_posterior(u: &[f64], dataset: &CoopDataset, spec: &ModelSpec) -> Result<Vec<f64>> {
    let model = GlmmModel::new(spec.clone(), dataset)?;
    let mut g = vec![0.0; u.len()];
    model.log_density_and_grad(u, &mut g)?;
    Ok(g)
}
