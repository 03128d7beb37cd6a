use std::path::{Path, PathBuf};

use coopnet::datapipe::{
    assemble_dataset, read_individuals, read_village_sizes, AssemblyOptions, CoopDataset, Covariate, Outcome,
    N_OFFER_CATEGORIES,
};
use coopnet::fit::{fit_model, FitReport};
use coopnet::glmm::{Family, GlmmModel, ModelSpec};
use coopnet::netcore::{individual_overlap, networks_from_ties, read_edges};
use coopnet::postfit::{
    icc_from_draws, linspace, marginal_effect, pointwise_loglik, psis_pareto_k, IccReport, MarginalCurve,
    MarginalPoint, ParetoKReport,
};
use coopnet::sampler::PosteriorDraws;
use coopnet::synth::{generate_dataset, recovery_experiment, RecoveryConfig, TrueParams};
use serde::Serialize;
use serde_json::json;

use crate::cli::{
    Command, FamilyArg, FitArgs, GlobalArgs, IngestArgs, MarginalArgs, OverlapArgs, PosteriorArgs, Preset,
    RecoverArgs, ReportArgs, TruthArgs,
};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::Recorder;
use crate::report;

pub const DRAWS_FILE: &str = "draws.csv";
pub const FIT_FILE: &str = "fit.json";
pub const MODEL_FILE: &str = "model.json";

pub fn run(command: Command, global: &GlobalArgs) -> CliResult<()> {
    let config = RunConfig::resolve(global)?;
    match command {
        Command::Ingest(args) => ingest(args, global, config),
        Command::Overlap(args) => overlap(args, global, config),
        Command::Fit(args) => fit(args, global, config),
        Command::Icc(args) => icc(args, global, config),
        Command::Loo(args) => loo(args, global, config),
        Command::Marginal(args) => marginal(args, global, config),
        Command::Simulate(args) => simulate(args, global, config),
        Command::Recover(args) => recover(args, global, config),
        Command::Report(args) => render_report(args, global, config),
    }
}

fn out_dir(global: &GlobalArgs) -> CliResult<PathBuf> {
    global
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out <dir> is required".into()))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

/// Counts per offer category, the data behind an offer histogram.
fn offer_histogram(ds: &CoopDataset) -> String {
    let mut out = String::from("category,offer_gyd,dg_count,ug_count\n");
    for c in 0..N_OFFER_CATEGORIES as u8 {
        let count = |f: fn(&coopnet::datapipe::CoopRow) -> Option<u8>| ds.rows.iter().filter(|r| f(r) == Some(c)).count();
        let offer = if (c as usize) + 1 == N_OFFER_CATEGORIES {
            "500+".to_string()
        } else {
            (u32::from(c) * 100).to_string()
        };
        out.push_str(&csv_line(&[
            c.to_string(),
            offer,
            count(|r| r.dg_category).to_string(),
            count(|r| r.ug_category).to_string(),
        ]));
    }
    out
}

fn write_dataset(rec: &mut Recorder, ds: &CoopDataset) -> CliResult<()> {
    let mut json = ds.to_json()?;
    json.push('\n');
    rec.write("dataset.json", json.as_bytes())?;
    rec.write("offer_histogram.csv", offer_histogram(ds).as_bytes())?;
    Ok(())
}

fn ingest(args: IngestArgs, global: &GlobalArgs, config: RunConfig) -> CliResult<()> {
    let arguments = json!({
        "edges": path_str(&args.edges),
        "individuals": path_str(&args.individuals),
        "village_sizes": args.village_sizes.as_deref().map(path_str),
    });
    let ties = read_edges(&args.edges)?;
    let people = read_individuals(&args.individuals)?;
    let sizes = args.village_sizes.as_deref().map(read_village_sizes).transpose()?;
    let networks = networks_from_ties(ties)?;
    let ds = assemble_dataset(
        &people,
        &networks,
        sizes.as_ref(),
        AssemblyOptions {
            annualization_factor: config.annualization_factor,
        },
    )?;

    let mut rec = Recorder::new(out_dir(global)?, "ingest", config, arguments)?;
    rec.input(&args.edges)?;
    rec.input(&args.individuals)?;
    if let Some(p) = &args.village_sizes {
        rec.input(p)?;
    }
    write_dataset(&mut rec, &ds)?;
    rec.finish()
}

fn overlap(args: OverlapArgs, global: &GlobalArgs, config: RunConfig) -> CliResult<()> {
    let out = global
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out <file.csv> is required".into()))?;
    let networks = networks_from_ties(read_edges(&args.edges)?)?;
    let mut body = String::from("ego_id,n_interactions,n_multidomain_interactions,overlap,undefined\n");
    for (ego, net) in &networks {
        let s = individual_overlap(net);
        body.push_str(&csv_line(&[
            ego.clone(),
            s.n_interactions.to_string(),
            s.n_multidomain_interactions.to_string(),
            s.value.to_string(),
            s.undefined.to_string(),
        ]));
    }
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = out
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("--out {} is not a file path", out.display())))?
        .to_string_lossy()
        .into_owned();
    let mut rec = Recorder::new(dir, "overlap", config, json!({ "edges": path_str(&args.edges), "out": name }))?;
    rec.input(&args.edges)?;
    rec.write(&name, body.as_bytes())?;
    rec.finish()
}

fn parse_effects(raw: &str) -> CliResult<Vec<Covariate>> {
    if raw.trim() == "none" || raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| s.trim().parse::<Covariate>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

fn model_spec(args: &FitArgs, ds: &CoopDataset, config: &RunConfig) -> CliResult<ModelSpec> {
    if let Some(path) = &args.model {
        return Ok(ModelSpec::load(path)?);
    }
    let outcome = match (&args.outcome, args.family) {
        (Some(o), _) => o.parse::<Outcome>().map_err(|e| CliError::Usage(e.to_string()))?,
        (None, Some(FamilyArg::Negbin)) => Outcome::Mayu,
        (None, _) => return Err(CliError::Usage("--outcome is required (mayu, dg or ug)".into())),
    };
    let family = args.family.unwrap_or(match outcome {
        Outcome::Mayu => FamilyArg::Negbin,
        Outcome::Dg | Outcome::Ug => FamilyArg::Ordinal,
    });
    let effects = parse_effects(&args.effects)?;
    let spec = match family {
        FamilyArg::Negbin => ModelSpec::new(Family::NegativeBinomial, outcome, effects),
        FamilyArg::Ordinal => ModelSpec::ordinal_from_data(ds, outcome, effects)?,
    };
    Ok(spec.with_priors(config.priors))
}

fn fit(args: FitArgs, global: &GlobalArgs, config: RunConfig) -> CliResult<()> {
    let arguments = json!({
        "dataset": path_str(&args.dataset),
        "family": args.family.map(|f| format!("{f:?}").to_lowercase()),
        "outcome": args.outcome,
        "effects": args.effects,
        "model": args.model.as_deref().map(path_str),
        "label": args.label,
    });
    let ds = CoopDataset::load(&args.dataset)?;
    let spec = model_spec(&args, &ds, &config)?;
    let label = args.label.clone().unwrap_or_else(|| spec.outcome.to_string());
    let out = out_dir(global)?;
    let fitted = fit_model(spec.clone(), &ds, &config.sampler)?;
    let report = fitted.report(&label, &config.sampler)?;

    let mut rec = Recorder::new(out, "fit", config, arguments)?;
    rec.input(&args.dataset)?;
    if let Some(p) = &args.model {
        rec.input(p)?;
    }
    let mut draws = Vec::new();
    fitted.draws.write_csv(&mut draws)?;
    rec.write(DRAWS_FILE, &draws)?;
    rec.write_json(FIT_FILE, &report)?;
    rec.write_json(MODEL_FILE, &spec)?;
    rec.finish()?;
    if fitted.failed {
        eprintln!(
            "warning: {:.1}% of iterations diverged; fit flagged as failed",
            100.0 * fitted.draws.divergent_fraction()
        );
    }
    Ok(())
}

struct Posterior {
    model: GlmmModel,
    draws: PosteriorDraws,
    label: String,
}

fn load_posterior(args: &PosteriorArgs, rec: &mut Recorder) -> CliResult<Posterior> {
    let model_path = args.fit.join(MODEL_FILE);
    let draws_path = args.fit.join(DRAWS_FILE);
    let fit_path = args.fit.join(FIT_FILE);
    let spec = ModelSpec::load(&model_path)?;
    let ds = CoopDataset::load(&args.dataset)?;
    let draws = PosteriorDraws::read_csv(&draws_path)?;
    let fit_text = std::fs::read_to_string(&fit_path).map_err(|e| CliError::missing(&fit_path, e))?;
    let fit: FitReport = serde_json::from_str(&fit_text).map_err(coopnet::Error::from)?;
    for p in [&args.dataset, &model_path, &draws_path, &fit_path] {
        rec.input(p)?;
    }
    let model = GlmmModel::new(spec, &ds)?;
    if draws.param_names != model.param_names() {
        return Err(coopnet::Error::Validation(format!(
            "{} does not match the model fitted on {}",
            draws_path.display(),
            args.dataset.display()
        ))
        .into());
    }
    Ok(Posterior {
        model,
        draws,
        label: fit.label,
    })
}

fn posterior_arguments(args: &PosteriorArgs) -> serde_json::Value {
    json!({ "fit": path_str(&args.fit), "dataset": path_str(&args.dataset) })
}

fn icc(args: PosteriorArgs, global: &GlobalArgs, config: RunConfig) -> CliResult<()> {
    let mut rec = Recorder::new(out_dir(global)?, "icc", config, posterior_arguments(&args))?;
    let post = load_posterior(&args, &mut rec)?;
    let report: IccReport = icc_from_draws(&post.label, &post.model, &post.draws)?;
    rec.write_json("icc.json", &report)?;
    rec.finish()
}

#[derive(Serialize)]
struct LooObservation<'a> {
    person_id: &'a str,
    village_id: &'a str,
    outcome: u64,
    pareto_k: Option<f64>,
    flagged: bool,
}

#[derive(Serialize)]
struct LooFile<'a> {
    label: &'a str,
    n_draws: usize,
    n_observations: usize,
    tail_fraction: f64,
    threshold: f64,
    n_flagged: usize,
    flagged_person_ids: Vec<&'a str>,
    n_missing_k: usize,
    observations: Vec<LooObservation<'a>>,
}

fn loo(args: PosteriorArgs, global: &GlobalArgs, config: RunConfig) -> CliResult<()> {
    let mut rec = Recorder::new(out_dir(global)?, "loo", config, posterior_arguments(&args))?;
    let post = load_posterior(&args, &mut rec)?;
    let ll = pointwise_loglik(&post.model, &post.draws, config.execution)?;
    let k: ParetoKReport = psis_pareto_k(&ll, config.execution)?;
    let d = post.model.design();
    let observations = (0..d.n_rows())
        .map(|i| LooObservation {
            person_id: &d.person_ids[i],
            village_id: &d.villages[d.village_index[i]],
            outcome: d.y[i],
            pareto_k: k.k[i],
            flagged: k.flagged.contains(&i),
        })
        .collect();
    let file = LooFile {
        label: &post.label,
        n_draws: k.n_draws,
        n_observations: d.n_rows(),
        tail_fraction: k.tail_fraction,
        threshold: k.threshold,
        n_flagged: k.n_flagged(),
        flagged_person_ids: k.flagged.iter().map(|&i| d.person_ids[i].as_str()).collect(),
        n_missing_k: k.k.iter().filter(|v| v.is_none()).count(),
        observations,
    };
    rec.write_json("loo.json", &file)?;
    rec.finish()
}

fn marginal_csv(points: &[MarginalPoint]) -> String {
    let mut out = String::from("grid_value,mean,ci89_lower,ci89_upper\n");
    for p in points {
        out.push_str(&csv_line(&[
            p.grid_value.to_string(),
            p.mean.to_string(),
            p.ci89_lower.to_string(),
            p.ci89_upper.to_string(),
        ]));
    }
    out
}

fn marginal(args: MarginalArgs, global: &GlobalArgs, config: RunConfig) -> CliResult<()> {
    let covariate: Covariate = args.covariate.parse().map_err(|e: coopnet::Error| CliError::Usage(e.to_string()))?;
    let mut arguments = posterior_arguments(&args.posterior);
    arguments["covariate"] = json!(covariate.name());
    arguments["grid_points"] = json!(args.grid_points);
    arguments["grid_min"] = json!(args.grid_min);
    arguments["grid_max"] = json!(args.grid_max);
    let mut rec = Recorder::new(out_dir(global)?, "marginal", config, arguments)?;
    let post = load_posterior(&args.posterior, &mut rec)?;
    let d = post.model.design();
    let column = post
        .model
        .spec()
        .fixed_effects
        .iter()
        .position(|c| *c == covariate)
        .ok_or_else(|| coopnet::Error::Validation(format!("covariate {covariate} is not in the model")))?;
    let observed = (0..d.n_rows()).map(|i| d.row(i)[column]);
    let lo = args.grid_min.unwrap_or_else(|| observed.clone().fold(f64::INFINITY, f64::min));
    let hi = args.grid_max.unwrap_or_else(|| observed.fold(f64::NEG_INFINITY, f64::max));
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) || args.grid_points == 0 {
        return Err(CliError::Usage(format!(
            "invalid grid: [{lo}, {hi}] with {} points",
            args.grid_points
        )));
    }
    let grid = linspace(lo, hi, args.grid_points);
    match marginal_effect(&post.model, &post.draws, covariate, &grid)? {
        MarginalCurve::Count(points) => {
            rec.write(&format!("marginal_{}.csv", covariate.name()), marginal_csv(&points).as_bytes())?;
        }
        MarginalCurve::Categories(curves) => {
            for (k, points) in curves.iter().enumerate() {
                rec.write(
                    &format!("marginal_{}_cat{k}.csv", covariate.name()),
                    marginal_csv(points).as_bytes(),
                )?;
            }
        }
    }
    rec.finish()
}

fn truth_from(args: &TruthArgs, rec: Option<&mut Recorder>) -> CliResult<TrueParams> {
    match (&args.truth, args.preset) {
        (Some(path), _) => {
            let t = TrueParams::load(path)?;
            if let Some(rec) = rec {
                rec.input(path)?;
            }
            Ok(t)
        }
        (None, Some(Preset::Mayu)) => Ok(TrueParams::mayu_default()),
        (None, Some(Preset::Dg)) => Ok(TrueParams::dictator_default()),
        (None, Some(Preset::Ug)) => Ok(TrueParams::ultimatum_default()),
        (None, None) => Err(CliError::Usage("one of --truth <file> or --preset is required".into())),
    }
}

fn truth_arguments(args: &TruthArgs) -> serde_json::Value {
    json!({
        "truth": args.truth.as_deref().map(path_str),
        "preset": args.preset.map(|p| format!("{p:?}").to_lowercase()),
    })
}

fn simulate(args: TruthArgs, global: &GlobalArgs, config: RunConfig) -> CliResult<()> {
    let mut rec = Recorder::new(out_dir(global)?, "simulate", config, truth_arguments(&args))?;
    let truth = truth_from(&args, Some(&mut rec))?;
    let ds = generate_dataset(&truth, config.sampler.seed)?;
    rec.write_json("truth.json", &truth)?;
    write_dataset(&mut rec, &ds)?;
    rec.finish()
}

fn recover(args: RecoverArgs, global: &GlobalArgs, mut config: RunConfig) -> CliResult<()> {
    if let Some(n) = args.replicates {
        config.replicates = n;
    }
    let mut arguments = truth_arguments(&args.truth);
    arguments["replicates"] = json!(config.replicates);
    let mut rec = Recorder::new(out_dir(global)?, "recover", config, arguments)?;
    let truth = truth_from(&args.truth, Some(&mut rec))?;
    // Replicates are the parallel unit; chains inside each run in order.
    let rc = RecoveryConfig {
        sampler: coopnet::sampler::SamplerConfig {
            execution: coopnet::Execution::Sequential,
            ..config.sampler
        },
        priors: config.priors,
        seed: config.sampler.seed,
        execution: config.execution,
    };
    let report = recovery_experiment(&truth, config.replicates, &rc)?;
    rec.write_json("truth.json", &truth)?;
    rec.write_json("recovery.json", &report)?;
    rec.finish()
}

fn render_report(args: ReportArgs, global: &GlobalArgs, config: RunConfig) -> CliResult<()> {
    let arguments = json!({
        "fit": args.fits.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
        "icc": args.iccs.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
    });
    let mut rec = Recorder::new(out_dir(global)?, "report", config, arguments)?;
    let mut fits = Vec::new();
    for dir in &args.fits {
        let path = dir.join(FIT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::missing(&path, e))?;
        let fit: FitReport = serde_json::from_str(&text).map_err(coopnet::Error::from)?;
        rec.input(&path)?;
        fits.push(fit);
    }
    let mut iccs = Vec::new();
    for path in &args.iccs {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        let icc: IccReport = serde_json::from_str(&text).map_err(coopnet::Error::from)?;
        if !fits.iter().any(|f| f.label == icc.label) {
            return Err(CliError::Usage(format!(
                "{}: no fit labelled {:?}",
                path.display(),
                icc.label
            )));
        }
        rec.input(path)?;
        iccs.push(icc);
    }
    let table = report::build(&fits, &iccs);
    rec.write("report.txt", report::render_text(&table).as_bytes())?;
    rec.write_json("report.json", &table)?;
    rec.finish()
}
