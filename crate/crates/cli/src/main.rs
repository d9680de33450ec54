//! `funnel`: simulate, fit, benchmark and check funnel-threshold models.
//!
//! Exit codes: 0 success, 1 input or data error, 2 convergence warning
//! (outputs still written), 3 simulation-validity failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "funnel", version, about = "Bayesian funnel-threshold models for staged decisions with censored outcomes")]
struct Cli {
    /// Worker threads for likelihood evaluation and chains (0 = all cores).
    #[arg(long, global = true, env = "FUNNEL_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw ground truth and a synthetic funnel dataset.
    Simulate(SimulateArgs),
    /// Fit the funnel model by MAP or MCMC.
    Fit(FitArgs),
    /// Fit the censoring-naive logistic baselines.
    Baselines(BaselinesArgs),
    /// Parameter recovery and AUROC/ECE tables.
    Evaluate(EvaluateArgs),
    /// Posterior predictive rates and the acuity regression.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    pub n_patients: usize,
    /// Extra held-out patients from the same ground truth.
    #[arg(long, default_value_t = 0)]
    pub n_test: usize,
    #[arg(long, default_value_t = 6)]
    pub n_features: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Every pathway must occur at least this often.
    #[arg(long, default_value_t = 10)]
    pub min_per_pathway: usize,
    /// Ground-truth redraws before giving up (exit code 3).
    #[arg(long, default_value_t = 50)]
    pub max_attempts: usize,
    /// Forbid decisions that skip an intermediate stage.
    #[arg(long)]
    pub no_skips: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Map,
    Mcmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Dense,
    Diagonal,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Dataset CSV: model-ready with `--config`, a raw extract with
    /// `--dictionary`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, required_unless_present = "dictionary", conflicts_with = "dictionary")]
    pub config: Option<PathBuf>,
    /// Feature dictionary JSON for a raw extract.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Transform statistics from an earlier load, reused instead of
    /// re-estimated.
    #[arg(long, requires = "dictionary")]
    pub stats: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FitMode::Map)]
    pub mode: FitMode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 500)]
    pub warmup: usize,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub target_accept: f64,
    #[arg(long, value_enum, default_value_t = MetricArg::Dense)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 1024)]
    pub max_leapfrog: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_iterations: usize,
    /// Use the N(−5, 1) intercept prior for rare outcomes.
    #[arg(long)]
    pub low_base_rate_prior: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselinesArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Complete features and outcomes (simulated data only).
    #[arg(long)]
    pub full: Option<PathBuf>,
    /// Comma-separated: target_y_observed, target_stage_decision,
    /// imputed_zero (default all).
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    /// Ridge penalty.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MortalityScoreArg {
    Conditional,
    Marginal,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Records to score (held-out data for prediction tables).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Complete features and withheld outcomes for the dataset.
    #[arg(long)]
    pub full: Option<PathBuf>,
    /// Ground truth JSON, enabling the parameter-recovery table.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Funnel MAP parameters JSON.
    #[arg(long, conflicts_with = "samples")]
    pub params: Option<PathBuf>,
    /// Funnel posterior samples CSV (sidecar `.json` next to it).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Directory written by `funnel baselines`.
    #[arg(long)]
    pub baselines: Option<PathBuf>,
    /// External predictions as `name=path.csv` (columns `id` plus any of
    /// `mortality`, `mortality_censored`, `mortality_observed`,
    /// `final_stage_admission`).
    #[arg(long)]
    pub predictions: Vec<String>,
    #[arg(long, value_enum, default_value_t = MortalityScoreArg::Conditional)]
    pub mortality_score: MortalityScoreArg,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Posterior draws used for scoring (evenly thinned).
    #[arg(long, default_value_t = 200)]
    pub max_draws: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, required_unless_present = "params", conflicts_with = "params")]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub max_draws: usize,
    #[arg(long, default_value = "acuity")]
    pub acuity_column: String,
    #[arg(long, default_value = "gender")]
    pub group_column: String,
    /// Value of the group column that marks group A (e.g. M).
    #[arg(long, default_value = "M")]
    pub group_a: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure {} threads: {e}", cli.threads);
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Baselines(a) => commands::baselines(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Diagnose(a) => commands::diagnose(a),
    };
    match result {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
