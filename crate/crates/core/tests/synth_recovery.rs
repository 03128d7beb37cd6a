use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use coopnet::datapipe::{CoopDataset, Covariate, Outcome};
use coopnet::exec::map_indexed;
use coopnet::fit::fit_model;
use coopnet::glmm::{Family, ModelSpec, PriorSet};
use coopnet::rng::{derive_seed, stream};
use coopnet::sampler::{median, SamplerConfig};
use coopnet::synth::{generate_dataset, recovery_experiment, RecoveryConfig, TrueFamily, TrueParams};
use coopnet::Execution;
use rand::Rng;
use rand_distr::{Distribution, StudentT};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Wide enough that the village-overlap coefficients are driven by the data.
fn wide_priors() -> PriorSet {
    PriorSet {
        beta_scale: 50.0,
        ..PriorSet::default()
    }
}

fn chi_square_p(table: &[Vec<f64>]) -> f64 {
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let n_cols = table[0].len();
    let cols: Vec<f64> = (0..n_cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, obs) in r.iter().enumerate() {
            let expected = rows[i] * cols[j] / total;
            stat += (obs - expected).powi(2) / expected;
        }
    }
    let dof = ((table.len() - 1) * (n_cols - 1)) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

fn outcome_table(ds: &CoopDataset, outcome: Outcome, bin: impl Fn(u64) -> usize, n_bins: usize) -> Vec<Vec<f64>> {
    ds.villages()
        .iter()
        .map(|v| {
            let mut row = vec![0.0; n_bins];
            for r in ds.rows.iter().filter(|r| r.village_id == *v) {
                row[bin(r.outcome(outcome).unwrap())] += 1.0;
            }
            row
        })
        .collect()
}

#[test]
fn null_truth_gives_homogeneous_villages() {
    let mut ord = TrueParams::dictator_default();
    ord.b_overlap_i = 0.0;
    ord.b_overlap_v = 0.0;
    ord.sigma_village = 0.0;
    ord.per_village_n = 150;
    ord.family = TrueFamily::OrderedLogistic {
        cutpoints: vec![-1.5, -0.5, 0.5, 1.5, 2.5],
    };
    let ds = generate_dataset(&ord, 31).unwrap();
    let p = chi_square_p(&outcome_table(&ds, Outcome::Dg, |c| c as usize, 6));
    assert!(p > 0.01, "ordinal homogeneity p = {p}");

    let mut nb = TrueParams::mayu_default();
    nb.b_overlap_i = 0.0;
    nb.b_overlap_v = 0.0;
    nb.sigma_village = 0.0;
    nb.per_village_n = 150;
    nb.family = TrueFamily::NegativeBinomial {
        intercept: 2.0,
        theta: 2.0,
    };
    let ds = generate_dataset(&nb, 32).unwrap();
    let bins = |y: u64| match y {
        0..=2 => 0,
        3..=5 => 1,
        6..=8 => 2,
        9..=12 => 3,
        _ => 4,
    };
    let p = chi_square_p(&outcome_table(&ds, Outcome::Mayu, bins, 5));
    assert!(p > 0.01, "count homogeneity p = {p}");
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    for (rank, i) in idx.into_iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn counts_rise_with_village_overlap() {
    let ds = generate_dataset(&TrueParams::mayu_default(), 33).unwrap();
    let (overlap, mean_y): (Vec<f64>, Vec<f64>) = ds
        .villages()
        .iter()
        .map(|v| {
            let rows: Vec<_> = ds.rows.iter().filter(|r| r.village_id == *v).collect();
            let y = rows.iter().map(|r| r.mayu_yearly.unwrap() as f64).sum::<f64>() / rows.len() as f64;
            (rows[0].overlap_v, y)
        })
        .unzip();
    let rho = pearson(&ranks(&overlap), &ranks(&mean_y));
    assert!(rho > 0.0, "rank correlation {rho}");
}

fn fingerprint(ds: &CoopDataset) -> u64 {
    let mut h = DefaultHasher::new();
    ds.to_json().unwrap().hash(&mut h);
    h.finish()
}

#[test]
fn distinct_seeds_give_distinct_datasets() {
    let truth = TrueParams::ultimatum_default();
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..200 {
        assert!(seen.insert(fingerprint(&generate_dataset(&truth, seed).unwrap())));
    }
    assert_eq!(
        fingerprint(&generate_dataset(&truth, 7).unwrap()),
        fingerprint(&generate_dataset(&truth, 7).unwrap())
    );
}

#[test]
fn zero_village_sd_is_recovered_near_zero() {
    let mut truth = TrueParams::mayu_default();
    truth.sigma_village = 0.0;
    let ds = generate_dataset(&truth, 34).unwrap();
    let config = SamplerConfig {
        seed: 34,
        ..SamplerConfig::default()
    };
    let fit = fit_model(truth.model_spec().with_priors(wide_priors()), &ds, &config).unwrap();
    let sigma = fit.draws.pooled_by_name("sigma_village").unwrap();
    assert!(median(&sigma) < 0.3, "median sigma {}", median(&sigma));
}

#[test]
fn more_villages_narrow_the_village_overlap_interval() {
    let config = SamplerConfig {
        n_warmup: 500,
        n_draws: 500,
        ..SamplerConfig::default()
    };
    let width = |n_villages: usize| -> f64 {
        let mut truth = TrueParams::mayu_default();
        truth.n_villages = n_villages;
        let widths: Vec<f64> = (0..3)
            .map(|r| {
                let ds = generate_dataset(&truth, 40 + r).unwrap();
                let cfg = SamplerConfig { seed: 40 + r, ..config };
                let fit = fit_model(truth.model_spec().with_priors(wide_priors()), &ds, &cfg).unwrap();
                let row = fit.report("w", &cfg).unwrap();
                let b2 = row.params.iter().find(|p| p.name == "b_overlap_V").unwrap();
                b2.ci89_upper - b2.ci89_lower
            })
            .collect();
        widths.iter().sum::<f64>() / widths.len() as f64
    };
    let (w8, w16) = (width(8), width(16));
    assert!(w16 < w8, "8 villages: {w8}, 16 villages: {w16}");
}

#[test]
fn recovery_report_accounts_for_every_replicate() {
    let mut truth = TrueParams::dictator_default();
    truth.n_villages = 4;
    truth.per_village_n = 15;
    let config = RecoveryConfig {
        sampler: SamplerConfig {
            n_chains: 2,
            n_warmup: 150,
            n_draws: 150,
            ..SamplerConfig::default()
        },
        priors: wide_priors(),
        seed: 5,
        execution: Execution::Parallel,
    };
    let report = recovery_experiment(&truth, 10, &config).unwrap();
    assert_eq!(report.replicates.len(), 10);
    assert_eq!(report.n_failed, report.replicates.iter().filter(|r| r.failed).count());
    let names: Vec<&str> = report.coverage.iter().map(|r| r.name.as_str()).collect();
    for name in ["b_overlap_i", "b_overlap_V", "sigma_village", "cutpoint[1]", "cutpoint[5]"] {
        assert!(names.contains(&name), "missing {name}");
    }
    for row in &report.coverage {
        assert!((0.0..=1.0).contains(&row.coverage));
        assert_eq!(row.n_used, 10 - report.n_failed);
    }
    let sequential = recovery_experiment(
        &truth,
        10,
        &RecoveryConfig {
            execution: Execution::Sequential,
            ..config
        },
    )
    .unwrap();
    assert_eq!(sequential.replicates, report.replicates);
}

/// Rank of each truth among thinned posterior draws, for parameters drawn
/// from the prior of a one-covariate ordinal model over four villages.
#[test]
fn calibration_ranks_are_uniform() {
    let priors = PriorSet {
        beta_scale: 2.0,
        intercept_scale: 2.0,
        sigma_scale: 1.0,
        ..PriorSet::default()
    };
    let n_replicates = 100;
    let (n_draws, thin) = (396, 8);
    let n_ranked = 2 * n_draws / thin;
    let tracked = ["cutpoint[1]", "b_overlap_i", "sigma_village"];
    let ranks: Vec<Vec<usize>> = map_indexed(n_replicates, Execution::Parallel, |r| {
        let seed = derive_seed(2024, r as u64);
        let mut rng = stream(seed, 1);
        let t = StudentT::new(priors.student_t_dof).unwrap();
        let mut cutpoints: Vec<f64> = (0..3).map(|_| priors.intercept_scale * t.sample(&mut rng)).collect();
        cutpoints.sort_by(f64::total_cmp);
        let beta = priors.beta_scale * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let sigma = (priors.sigma_scale * t.sample(&mut rng)).abs();
        let mut truth = TrueParams::dictator_default();
        truth.family = TrueFamily::OrderedLogistic {
            cutpoints: cutpoints.clone(),
        };
        truth.b_overlap_i = beta;
        truth.b_overlap_v = 0.0;
        truth.sigma_village = sigma;
        truth.n_villages = 4;
        let ds = generate_dataset(&truth, seed).unwrap();
        let spec = ModelSpec::new(
            Family::OrderedLogistic { n_categories: 4 },
            Outcome::Dg,
            vec![Covariate::OverlapIndividual],
        )
        .with_priors(priors);
        let config = SamplerConfig {
            n_chains: 2,
            n_warmup: 300,
            n_draws,
            seed: derive_seed(seed, 2),
            execution: Execution::Sequential,
            ..SamplerConfig::default()
        };
        let fit = fit_model(spec, &ds, &config).unwrap();
        let truths = [cutpoints[0], beta, sigma];
        tracked
            .iter()
            .zip(truths)
            .map(|(name, value)| {
                let pooled = fit.draws.pooled_by_name(name).unwrap();
                pooled.iter().step_by(thin).filter(|d| **d < value).count()
            })
            .collect()
    });
    let critical = ChiSquared::new(9.0).unwrap().inverse_cdf(0.99);
    for (k, name) in tracked.iter().enumerate() {
        let mut bins = [0.0f64; 10];
        for r in &ranks {
            bins[r[k] * 10 / (n_ranked + 1)] += 1.0;
        }
        let expected = n_replicates as f64 / 10.0;
        let stat: f64 = bins.iter().map(|b| (b - expected).powi(2) / expected).sum();
        assert!(stat < critical, "{name}: rank histogram {bins:?}, chi-square {stat:.2}");
    }
}
