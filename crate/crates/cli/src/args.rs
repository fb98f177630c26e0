use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "nbs",
    version,
    about = "Covariate-adjusted net benefit separation (NBS) for cost-effectiveness data"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset with known truth.
    Simulate(SimulateArgs),
    /// Fit the outcome and censoring models and save them.
    Fit(FitArgs),
    /// Estimate θ(λ | x) with optional bootstrap inference.
    Estimate(Box<EstimateArgs>),
    /// Rerun a simulation table.
    Replicate(ReplicateArgs),
    /// Draw a CED curve from a CSV written by `estimate`.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    /// X modifies the treatment effect.
    Effect,
    /// X has no effect.
    Null,
    /// Observational cohort with stage, Charlson index and zero costs.
    Analogue,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// 0.10, 0.30 or 0.50 (effect and null scenarios).
    #[arg(long)]
    pub censoring: Option<f64>,
    /// Unmeasured confounding, e.g. `survival:high` or `cost:low` (effect scenario, 30% censoring).
    #[arg(long)]
    pub confounding: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostFamilyArg {
    LogNormal,
    ZeroInflated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CensoringArg {
    /// Kaplan–Meier within arms.
    Km,
    /// Cox model stratified by arm.
    Cox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantileArg {
    Auto,
    Empirical,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CiArg {
    Symmetric,
    Normal,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Input CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON column mapping for the CSV.
    #[arg(long)]
    pub schema: PathBuf,
    /// JSON analysis settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Survival model terms, e.g. "A + x + A:x + l".
    #[arg(long)]
    pub survival: Option<String>,
    /// Cost model terms, e.g. "A + Z".
    #[arg(long)]
    pub cost: Option<String>,
    #[arg(long, value_enum)]
    pub cost_family: Option<CostFamilyArg>,
    #[arg(long, value_enum)]
    pub censoring: Option<CensoringArg>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Probit terms in X, e.g. "stage + charlson".
    #[arg(long)]
    pub probit: Option<String>,
    /// Willingness-to-pay values, comma separated and increasing.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Covariate profiles: a JSON array, or a file holding one.
    #[arg(long)]
    pub profiles: Option<String>,
    /// Monte Carlo draws per arm.
    #[arg(long = "M")]
    pub m: Option<usize>,
    #[arg(long)]
    pub n_omega: Option<usize>,
    #[arg(long, value_enum)]
    pub quantile: Option<QuantileArg>,
    /// Bootstrap replicates; 0 gives point estimates only.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = CiArg::Symmetric)]
    pub ci: CiArg,
    /// Coefficients to test as zero; one hypothesis per flag, names comma separated.
    #[arg(long)]
    pub test: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use saved models from `fit` instead of refitting.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// λ range drawn solid in the CED plot, as "lower,upper".
    #[arg(long)]
    pub primary_range: Option<String>,
    /// Also write every bootstrap replicate to replicates.csv.
    #[arg(long)]
    pub replicates_csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    /// 1: X affects NBS; 2: X has no effect; 3: unmeasured confounding.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub table: u8,
    #[arg(long, default_value_t = 200)]
    pub sims: usize,
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
    /// Sample sizes, comma separated (default 500,5000; 5000 for table 3).
    #[arg(long)]
    pub n: Option<String>,
    /// Censoring levels for tables 1 and 2 (default 0.10,0.30,0.50).
    #[arg(long)]
    pub censoring: Option<String>,
    /// Confounding levels for table 3 (default low,medium,high).
    #[arg(long)]
    pub confounding: Option<String>,
    #[arg(long = "M", default_value_t = 5000)]
    pub m: usize,
    #[arg(long, default_value_t = 30)]
    pub n_omega: usize,
    /// Oracle draws per arm for the true values.
    #[arg(long, default_value_t = 1_000_000)]
    pub oracle: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// CED CSV from `estimate`.
    #[arg(long)]
    pub ced: PathBuf,
    /// Overrides the primary-range flags stored in the CSV, as "lower,upper".
    #[arg(long)]
    pub primary_range: Option<String>,
    /// Output SVG file.
    #[arg(long)]
    pub out: PathBuf,
}
