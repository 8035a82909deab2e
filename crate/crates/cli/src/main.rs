//! `fdclust`: simulate, fit, summarize, sweep and explore from the shell.
//!
//! Exit status is 0 on success, 1 on a runtime or numerical failure and 2
//! when the inputs fail validation.

mod commands;
mod fit;
mod manifest;
mod summarize;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fdclust", version, about = "Time-varying clustering of multivariate functional data")]
pub struct Cli {
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for chains and sweep cells (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "fdclust-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset from the model under a stated truth.
    Simulate(SimulateArgs),
    /// Turn a long-format measurement table into a model-ready dataset.
    Ingest(IngestArgs),
    /// Run the Gibbs sampler.
    Fit(FitArgs),
    /// Summarize the retained draws of a finished run.
    Summarize(SummarizeArgs),
    /// Fit a grid of prior settings and tabulate cluster counts.
    Sweep(SweepArgs),
    /// Exploratory averages and monthly least-squares fits.
    Explore(ExploreArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Table with header station,timestamp,variable,value.
    #[arg(long)]
    pub input: PathBuf,
    /// Station coordinates with header station,x,y.
    #[arg(long)]
    pub coords: Option<PathBuf>,
    /// TOML transform specification; defaults to sqrt ozone and log PM10.
    #[arg(long)]
    pub transforms: Option<PathBuf>,
    #[arg(long, default_value = ",")]
    pub delimiter: char,
    #[arg(long, value_enum, default_value = "fail")]
    pub gap_policy: GapPolicyArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum GapPolicyArg {
    Fail,
    NearestStation,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset directory as written by `simulate` or `ingest`.
    #[arg(long)]
    pub data: PathBuf,
    /// Continue each chain from its last checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop every chain after this many sweeps, leaving a checkpoint.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Run directory written by `fit`.
    #[arg(long)]
    pub run: PathBuf,
    /// Also write the series behind each figure-style plot.
    #[arg(long, visible_alias = "plot-data")]
    pub figure_data: bool,
    /// Truth state directory; adds adjusted Rand indices of the modal partitions.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// TOML grid specification.
    #[arg(long)]
    pub spec: PathBuf,
    /// Fit cells concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct ExploreArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Report averages on the original measurement scale.
    #[arg(long)]
    pub original_scale: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let argv: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(&cli, a, &argv),
        Command::Ingest(a) => commands::ingest(&cli, a, &argv),
        Command::Fit(a) => fit::run(&cli, a, &argv),
        Command::Summarize(a) => summarize::run(&cli, a, &argv),
        Command::Sweep(a) => commands::sweep(&cli, a, &argv),
        Command::Explore(a) => commands::explore(&cli, a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
