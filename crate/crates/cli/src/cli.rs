use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "coopnet", version, about = "Multiplex-network overlap and multilevel cooperation models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; falls back to COOPNET_SEED, then the config file.
    #[arg(long, global = true, env = "COOPNET_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    #[arg(long, global = true)]
    pub draws: Option<usize>,
    /// JSON run configuration (see config.schema.json).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (a file path for `overlap`).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Join survey records and ego-networks into dataset.json.
    Ingest(IngestArgs),
    /// Individual overlap per ego from an edge list.
    Overlap(OverlapArgs),
    /// Fit one multilevel model.
    Fit(FitArgs),
    /// Intra-class correlation from a fitted model.
    Icc(PosteriorArgs),
    /// Pareto-k diagnostics for every observation.
    Loo(PosteriorArgs),
    /// Marginal-effect curves over one covariate.
    Marginal(MarginalArgs),
    /// Draw a synthetic dataset from known parameters.
    Simulate(TruthArgs),
    /// Repeated simulate-and-fit parameter recovery.
    Recover(RecoverArgs),
    /// Render fitted models as a side-by-side effects table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub individuals: PathBuf,
    /// `village_id,size` census file; enables the size_V covariate.
    #[arg(long)]
    pub village_sizes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    #[arg(long)]
    pub edges: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Negbin,
    Ordinal,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to the family implied by the outcome.
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// mayu, dg or ug.
    #[arg(long)]
    pub outcome: Option<String>,
    /// Comma-separated covariates, or `none`.
    #[arg(long, default_value = "overlap_i,overlap_V")]
    pub effects: String,
    /// Full model specification; replaces --family/--outcome/--effects.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Name used in reports; defaults to the outcome.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct PosteriorArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct MarginalArgs {
    #[command(flatten)]
    pub posterior: PosteriorArgs,
    #[arg(long, default_value = "overlap_i")]
    pub covariate: String,
    #[arg(long, default_value_t = 50)]
    pub grid_points: usize,
    /// Defaults to the observed minimum.
    #[arg(long)]
    pub grid_min: Option<f64>,
    /// Defaults to the observed maximum.
    #[arg(long)]
    pub grid_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Mayu,
    Dg,
    Ug,
}

#[derive(Debug, Args)]
pub struct TruthArgs {
    #[arg(long, conflicts_with = "preset")]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[command(flatten)]
    pub truth: TruthArgs,
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Fit directory; repeat for each model column, in order.
    #[arg(long = "fit", required = true)]
    pub fits: Vec<PathBuf>,
    /// icc.json files, matched to fits by label.
    #[arg(long = "icc")]
    pub iccs: Vec<PathBuf>,
}
