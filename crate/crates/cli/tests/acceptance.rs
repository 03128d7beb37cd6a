//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines always
//! show up in `cargo test` output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use coopnet::datapipe::Outcome;
use coopnet::fit::fit_model;
use coopnet::glmm::{negbin_logpmf, ordered_logistic_logpmf, Family, GlmmModel, ModelSpec, PriorSet};
use coopnet::netcore::{build_network, individual_overlap, Direction, Tie};
use coopnet::postfit::{icc_from_draws, icc_ordinal, pointwise_loglik, psis_pareto_k, K_THRESHOLD};
use coopnet::rng::{derive_seed, stream};
use coopnet::sampler::{ess, rhat, run_chains, LogDensity, SamplerConfig};
use coopnet::special::{ln_gamma, log_sigmoid};
use coopnet::synth::{generate_dataset, recovery_experiment, RecoveryConfig, TrueParams};
use coopnet::{Execution, Result as CoreResult};
use rand::Rng;

type Verdict = Result<String, String>;

/// Beta prior wide enough not to shrink the village-overlap truths (about
/// 24 on the raw proportion scale); all other priors at their defaults.
fn wide_priors() -> PriorSet {
    PriorSet {
        beta_scale: 50.0,
        ..PriorSet::default()
    }
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 -----------------------------------------------------------------------

fn overlap_worked_example() -> Verdict {
    let dirs = [Direction::Give, Direction::Get, Direction::Joint];
    let mut ties = Vec::new();
    // One alter in three layers and eight alters in two: 3 + 16 = 19.
    for (layer, dir) in dirs.iter().enumerate() {
        ties.push(Tie::new("ego", "m0", format!("d{layer}"), *dir));
    }
    for a in 1..=8 {
        ties.push(Tie::new("ego", format!("m{a}"), "d0", Direction::Give));
        ties.push(Tie::new("ego", format!("m{a}"), "d1", Direction::Give));
    }
    for a in 0..37 {
        ties.push(Tie::new("ego", format!("s{a}"), format!("d{}", a % 5), dirs[a % 3]));
    }
    let score = individual_overlap(&build_network("ego", ties).map_err(|e| e.to_string())?);
    let shown = format!("{:.3}", score.value);
    check(
        score.ratio() == (19, 56) && shown == "0.339" && score.value == 19.0 / 56.0,
        format!("{}/{} -> {shown}", score.n_multidomain_interactions, score.n_interactions),
    )
}

// 2 -----------------------------------------------------------------------

fn icc_cross_checks() -> Verdict {
    let dg = 100.0 * icc_ordinal(0.27f64.powi(2)).map_err(|e| e.to_string())?.icc;
    let ug = 100.0 * icc_ordinal(0.49f64.powi(2)).map_err(|e| e.to_string())?.icc;
    check(
        (dg - 2.2).abs() <= 0.05 && (ug - 6.8).abs() <= 0.05,
        format!("sd 0.27 -> {dg:.3}%, sd 0.49 -> {ug:.3}% (count-model ICCs excluded: dispersion and mean unpublished)"),
    )
}

// 3 -----------------------------------------------------------------------

/// Poisson-gamma mixture integrated over log-rate with the trapezoid rule;
/// the integrand decays double-exponentially to the right and exponentially
/// to the left, so the rule converges geometrically.
fn negbin_quadrature(y: u64, mu: f64, theta: f64) -> f64 {
    let yf = y as f64;
    let rate = theta / mu;
    let log_norm = theta * rate.ln() - ln_gamma(theta) - ln_gamma(yf + 1.0);
    let log_f = |t: f64| log_norm + (yf + theta) * t - (1.0 + rate) * t.exp();
    let (lo, hi, h) = (-120.0, 8.0, 0.005);
    let n = ((hi - lo) / h) as usize;
    let terms: Vec<f64> = (0..=n).map(|i| log_f(lo + i as f64 * h)).collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms
        .iter()
        .enumerate()
        .map(|(i, v)| if i == 0 || i == n { 0.5 } else { 1.0 } * (v - m).exp())
        .sum();
    m + (h * sum).ln()
}

fn likelihood_oracles() -> Verdict {
    let mut worst_p: f64 = 0.0;
    let mut worst_log: f64 = 0.0;
    for y in 0..=20u64 {
        for mu in [0.5, 2.0, 10.0] {
            for theta in [0.5, 2.0, 20.0] {
                let closed = negbin_logpmf(y as f64, mu, theta).map_err(|e| e.to_string())?;
                let quad = negbin_quadrature(y, mu, theta);
                worst_p = worst_p.max((closed.exp() - quad.exp()).abs());
                worst_log = worst_log.max((closed - quad).abs());
            }
        }
    }
    let mut rng = stream(3, 0);
    let mut worst_sum: f64 = 0.0;
    let mut all_inside = true;
    for _ in 0..1000 {
        let k = rng.random_range(2..=8usize);
        let mut cuts: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-8.0..8.0)).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let eta = rng.random_range(-10.0..10.0);
        let probs: Vec<f64> = (0..=cuts.len())
            .map(|c| ordered_logistic_logpmf(c, eta, &cuts).map(f64::exp))
            .collect::<CoreResult<_>>()
            .map_err(|e| e.to_string())?;
        all_inside &= probs.iter().all(|p| *p > 0.0 && *p < 1.0);
        worst_sum = worst_sum.max((probs.iter().sum::<f64>() - 1.0).abs());
    }
    check(
        worst_p <= 1e-8 && worst_log <= 1e-8 && worst_sum <= 1e-12 && all_inside,
        format!(
            "count pmf vs quadrature: max |dp| {worst_p:.1e}, max |dlog p| {worst_log:.1e}; \
             ordinal max |sum - 1| {worst_sum:.1e} over 1000 sets"
        ),
    )
}

// 4 -----------------------------------------------------------------------

fn gradient_check(model: &GlmmModel, seed: u64) -> Result<f64, String> {
    let mut rng = stream(seed, 0);
    let n = model.n_unconstrained();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut g = vec![0.0; n];
        model.log_density_and_grad(&u, &mut g).map_err(|e| e.to_string())?;
        for k in 0..n {
            let h = 1e-5;
            let mut up = u.clone();
            let mut dn = u.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (model.log_density(&up).map_err(|e| e.to_string())?
                - model.log_density(&dn).map_err(|e| e.to_string())?)
                / (2.0 * h);
            worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        }
    }
    Ok(worst)
}

fn gradient_correctness() -> Verdict {
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, truth) in [("count", TrueParams::mayu_default()), ("ordinal", TrueParams::dictator_default())] {
        let ds = generate_dataset(&truth, 4).map_err(|e| e.to_string())?;
        let model = GlmmModel::new(truth.model_spec(), &ds).map_err(|e| e.to_string())?;
        let worst = gradient_check(&model, 40)?;
        ok &= worst < 1e-5;
        detail.push(format!("{name} max rel err {worst:.1e}"));
    }
    check(ok, format!("{} at 50 points each", detail.join(", ")))
}

// 5 -----------------------------------------------------------------------

struct Gaussian {
    /// Precision matrix, row-major.
    precision: Vec<f64>,
    dim: usize,
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.dim
    }
    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> CoreResult<f64> {
        let mut lp = 0.0;
        for i in 0..self.dim {
            let row: f64 = (0..self.dim).map(|j| self.precision[i * self.dim + j] * x[j]).sum();
            grad[i] = -row;
            lp -= 0.5 * x[i] * row;
        }
        Ok(lp)
    }
}

/// Success probability on the logit scale after 7 of 10 successes with a
/// uniform prior; the Jacobian of the logit transform is included.
struct BetaBinomial;

impl LogDensity for BetaBinomial {
    fn dim(&self) -> usize {
        1
    }
    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> CoreResult<f64> {
        let p = 1.0 / (1.0 + (-x[0]).exp());
        grad[0] = 8.0 - 12.0 * p;
        Ok(8.0 * log_sigmoid(x[0]) + 4.0 * log_sigmoid(-x[0]))
    }
    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        vec![1.0 / (1.0 + (-x[0]).exp())]
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn sampler_correctness() -> Verdict {
    // A mean tolerance of 0.05 only discriminates when the Monte Carlo error
    // is well below it: 4 x 5000 draws keep that error near 0.012 on the
    // correlated target (ESS ~ 0.3 per draw), so 0.05 is a 4-sigma bound.
    let config = SamplerConfig {
        seed: 5,
        n_draws: 5000,
        ..SamplerConfig::default()
    };
    let mut ok = true;
    let mut detail = Vec::new();

    let normal = Gaussian {
        precision: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        dim: 3,
    };
    let draws = run_chains(&normal, &config).map_err(|e| e.to_string())?;
    let mut worst = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    for i in 0..3 {
        let (m, sd) = mean_sd(&draws.pooled(i));
        let r = rhat(&draws.chains(i)).map_err(|e| e.to_string())?;
        let e = ess(&draws.chains(i)).map_err(|e| e.to_string())?;
        worst = (worst.0.max(m.abs()), worst.1.max((sd - 1.0).abs()), worst.2.max(r), worst.3.min(e));
    }
    ok &= worst.0 < 0.05 && worst.1 < 0.05 && worst.2 < 1.01 && worst.3 > 400.0;
    detail.push(format!(
        "normal |mean| {:.3} |sd-1| {:.3} rhat {:.3} ess {:.0}",
        worst.0, worst.1, worst.2, worst.3
    ));

    // Covariance [[1, .8], [.8, 1]].
    let det = 1.0 - 0.64;
    let corr = Gaussian {
        precision: vec![1.0 / det, -0.8 / det, -0.8 / det, 1.0 / det],
        dim: 2,
    };
    let draws = run_chains(&corr, &SamplerConfig { seed: 6, ..config }).map_err(|e| e.to_string())?;
    let (x, y) = (draws.pooled(0), draws.pooled(1));
    let ((mx, sx), (my, sy)) = (mean_sd(&x), mean_sd(&y));
    let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0);
    let rho = cov / (sx * sy);
    let r = rhat(&draws.chains(0)).unwrap().max(rhat(&draws.chains(1)).unwrap());
    let e = ess(&draws.chains(0)).unwrap().min(ess(&draws.chains(1)).unwrap());
    ok &= (rho - 0.8).abs() < 0.05 && mx.abs() < 0.05 && my.abs() < 0.05 && r < 1.01 && e > 400.0;
    detail.push(format!(
        "correlated means ({mx:.3}, {my:.3}) rho {rho:.3} rhat {r:.3} ess {e:.0}"
    ));

    let draws = run_chains(&BetaBinomial, &SamplerConfig { seed: 7, ..config }).map_err(|e| e.to_string())?;
    let (m, _) = mean_sd(&draws.pooled(0));
    ok &= (m - 8.0 / 12.0).abs() < 0.02;
    detail.push(format!("beta-binomial mean {m:.4} vs {:.4}", 8.0 / 12.0));
    check(ok, detail.join("; "))
}

// 6 -----------------------------------------------------------------------

fn parameter_recovery() -> Verdict {
    let truth = TrueParams::mayu_default();
    let config = RecoveryConfig {
        sampler: SamplerConfig {
            execution: Execution::Sequential,
            ..SamplerConfig::default()
        },
        priors: wide_priors(),
        seed: 6,
        execution: Execution::Parallel,
    };
    let report = recovery_experiment(&truth, 20, &config).map_err(|e| e.to_string())?;
    let mut ok = report.n_failed == 0;
    let mut parts = Vec::new();
    for row in &report.coverage {
        ok &= row.coverage >= 0.70;
        parts.push(format!("{} {:.2}", row.name, row.coverage));
    }
    for name in ["b_overlap_i", "b_overlap_V"] {
        let row = report.row(name).ok_or(format!("no {name} row"))?;
        ok &= row.sign_agreement >= 18;
        parts.push(format!("{name} sign {}/{}", row.sign_agreement, row.n_used));
    }
    check(
        ok,
        format!("coverage: {}; failed fits {}", parts.join(", "), report.n_failed),
    )
}

// 7 -----------------------------------------------------------------------

fn outlier_diagnostic() -> Verdict {
    let truth = TrueParams::mayu_default();
    let mut ds = generate_dataset(&truth, 7).map_err(|e| e.to_string())?;
    let max = ds.rows.iter().filter_map(|r| r.mayu_yearly).max().unwrap_or(0);
    let target = 17;
    ds.rows[target].mayu_yearly = Some(10 * max);
    ds.rows[target].mayu_per_year = Some(10 * max);
    let outlier_id = ds.rows[target].person_id.clone();
    let config = SamplerConfig {
        seed: 7,
        ..SamplerConfig::default()
    };
    let fit = fit_model(truth.model_spec().with_priors(wide_priors()), &ds, &config).map_err(|e| e.to_string())?;
    let ll = pointwise_loglik(&fit.model, &fit.draws, Execution::Parallel).map_err(|e| e.to_string())?;
    let report = psis_pareto_k(&ll, Execution::Parallel).map_err(|e| e.to_string())?;
    let ids = &fit.model.design().person_ids;
    let idx = ids.iter().position(|p| *p == outlier_id).ok_or("outlier row dropped")?;
    let k_out = report.k[idx].unwrap_or(f64::NAN);
    let others: Vec<Option<f64>> = report.k.iter().enumerate().filter(|(i, _)| *i != idx).map(|(_, k)| *k).collect();
    let below = others.iter().filter(|k| k.is_some_and(|k| k < K_THRESHOLD)).count();
    let share = below as f64 / others.len() as f64;
    check(
        k_out > K_THRESHOLD && share >= 0.95,
        format!("injected count {}: k = {k_out:.2}; others below 0.7: {below}/{}", 10 * max, others.len()),
    )
}

// 8 -----------------------------------------------------------------------

fn icc_attenuation() -> Verdict {
    let mut truth = TrueParams::mayu_default();
    truth.sigma_village = 0.0;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for r in 0..20u64 {
        let seed = derive_seed(8, r);
        let ds = generate_dataset(&truth, seed).map_err(|e| e.to_string())?;
        let config = SamplerConfig {
            seed: derive_seed(seed, 1),
            ..SamplerConfig::default()
        };
        let null = ModelSpec::new(Family::NegativeBinomial, Outcome::Mayu, vec![]).with_priors(wide_priors());
        let f0 = fit_model(null, &ds, &config).map_err(|e| e.to_string())?;
        let f1 = fit_model(truth.model_spec().with_priors(wide_priors()), &ds, &config).map_err(|e| e.to_string())?;
        let i0 = icc_from_draws("unconditional", &f0.model, &f0.draws).map_err(|e| e.to_string())?;
        let i1 = icc_from_draws("adjusted", &f1.model, &f1.draws).map_err(|e| e.to_string())?;
        if i1.icc.median < i0.icc.median {
            wins += 1;
        }
        pairs.push((i0.icc.median, i1.icc.median));
    }
    let med = |f: fn(&(f64, f64)) -> f64| {
        let mut v: Vec<f64> = pairs.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        0.5 * (v[9] + v[10])
    };
    check(
        wins >= 18,
        format!(
            "adjusted < unconditional in {wins}/20; typical ICC {:.1}% -> {:.1}%",
            100.0 * med(|p| p.0),
            100.0 * med(|p| p.1)
        ),
    )
}

// 9 -----------------------------------------------------------------------

const EDGES: &str = "ego_id,alter_id,domain,direction
p1,p2,fish,give
p1,p2,farm,get
p1,p3,fish,give
p2,p1,fish,joint
p4,p5,farm,give
p4,p5,farm,get
";

const PEOPLE: &str = "person_id,village_id,dg_offer_gyd,ug_offer_gyd,mayu_per_month,mayu_per_year
p1,A,200,400,2,
p2,A,0,500,,10
p3,A,100,,,
p4,B,1000,300,0,
p5,B,,,,7
";

const CONFIG: &str = r#"{
  "sampler": { "n_chains": 2, "n_warmup": 300, "n_draws": 300 },
  "priors": { "beta_scale": 50.0 }
}"#;

const SMALL_TRUTH: &str = r#"{
  "family": { "kind": "ordered_logistic", "cutpoints": [-8.8, -7.6, -6.6, -5.6, -4.6] },
  "outcome": "dg",
  "b_overlap_i": -2.83,
  "b_overlap_v": -23.1,
  "b_size": null,
  "sigma_village": 0.27,
  "n_villages": 4,
  "per_village_n": 15,
  "overlap": { "village_mean_low": 0.15, "village_mean_high": 0.45, "concentration": 14.0 },
  "village_size_range": [150.0, 450.0],
  "notes": []
}"#;

fn run_cli(root: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_coopnet"))
        .args(args)
        .current_dir(root)
        .env("SOURCE_DATE_EPOCH", "1546300800")
        .env_remove("COOPNET_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`coopnet {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(root: &Path) -> Result<(), String> {
    std::fs::write(root.join("edges.csv"), EDGES).map_err(|e| e.to_string())?;
    std::fs::write(root.join("people.csv"), PEOPLE).map_err(|e| e.to_string())?;
    std::fs::write(root.join("config.json"), CONFIG).map_err(|e| e.to_string())?;
    std::fs::write(root.join("small_truth.json"), SMALL_TRUTH).map_err(|e| e.to_string())?;
    let steps: Vec<Vec<&str>> = vec![
        vec!["overlap", "--edges", "edges.csv", "--out", "overlap/overlap.csv"],
        vec!["ingest", "--edges", "edges.csv", "--individuals", "people.csv", "--out", "ingest"],
        vec!["simulate", "--preset", "mayu", "--seed", "91", "--out", "sim_mayu"],
        vec!["simulate", "--preset", "dg", "--seed", "92", "--out", "sim_dg"],
        vec!["simulate", "--preset", "ug", "--seed", "93", "--out", "sim_ug"],
        vec!["fit", "--dataset", "sim_mayu/dataset.json", "--outcome", "mayu", "--config", "config.json", "--seed", "1", "--out", "fit_mayu"],
        vec!["fit", "--dataset", "sim_dg/dataset.json", "--outcome", "dg", "--config", "config.json", "--seed", "2", "--out", "fit_dg"],
        vec!["fit", "--dataset", "sim_ug/dataset.json", "--outcome", "ug", "--config", "config.json", "--seed", "3", "--out", "fit_ug"],
        vec!["icc", "--fit", "fit_mayu", "--dataset", "sim_mayu/dataset.json", "--out", "icc_mayu"],
        vec!["icc", "--fit", "fit_dg", "--dataset", "sim_dg/dataset.json", "--out", "icc_dg"],
        vec!["icc", "--fit", "fit_ug", "--dataset", "sim_ug/dataset.json", "--out", "icc_ug"],
        vec!["loo", "--fit", "fit_mayu", "--dataset", "sim_mayu/dataset.json", "--out", "loo_mayu"],
        vec!["marginal", "--fit", "fit_mayu", "--dataset", "sim_mayu/dataset.json", "--covariate", "overlap_i", "--out", "marginal_mayu"],
        vec!["marginal", "--fit", "fit_dg", "--dataset", "sim_dg/dataset.json", "--covariate", "overlap_V", "--out", "marginal_dg"],
        vec!["recover", "--truth", "small_truth.json", "--replicates", "10", "--chains", "2", "--warmup", "150", "--draws", "150", "--config", "config.json", "--out", "recover_dg"],
        vec![
            "report", "--fit", "fit_mayu", "--fit", "fit_dg", "--fit", "fit_ug", "--icc", "icc_mayu/icc.json", "--icc",
            "icc_dg/icc.json", "--icc", "icc_ug/icc.json", "--out", "report",
        ],
    ];
    for step in &steps {
        run_cli(root, step)?;
    }
    Ok(())
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path)?);
        }
    }
    Ok(())
}

fn end_to_end_determinism() -> Verdict {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    collect(a.path(), a.path(), &mut fa).map_err(|e| e.to_string())?;
    collect(b.path(), b.path(), &mut fb).map_err(|e| e.to_string())?;
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let n_manifests = fa.keys().filter(|k| k.ends_with("manifest.json")).count();
    check(
        differing.is_empty() && fa.len() > 30,
        if differing.is_empty() {
            format!("{} files ({n_manifests} manifests) byte-identical across two runs", fa.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 9] = [
        ("overlap worked example", overlap_worked_example),
        ("ICC cross-checks", icc_cross_checks),
        ("likelihood oracles", likelihood_oracles),
        ("gradient correctness", gradient_correctness),
        ("sampler correctness", sampler_correctness),
        ("parameter recovery at field-study scale", parameter_recovery),
        ("outlier diagnostic", outlier_diagnostic),
        ("ICC attenuation", icc_attenuation),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|n| n != i + 1) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {} ({name}, {secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}, {secs:.1}s): {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
