use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mdes_experiments::{run_by_kind, ExperimentConfig, ExperimentKind, Overrides};

/// Runs one experiment and prints its verdict as JSON.
#[derive(Parser, Debug)]
#[command(name = "mdes", version)]
struct Cli {
    /// fig-implicit, fig-bernstein, fig-offset-analysis, exp-l1-rate, exp-kernel or exp-path-vs-erm
    experiment: String,
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of replicates; seeds are derived from the base seed.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> mdes_experiments::Result<bool> {
    let kind: ExperimentKind = cli.experiment.parse()?;
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| {
            mdes_experiments::ExpError::Config("no output directory (use --out)".into())
        })?;
    let ov = Overrides {
        seeds: cli.seeds,
        base_seed: cli.base_seed,
        jobs: cli.jobs,
    };
    let verdict = run_by_kind(kind, &cfg, &ov, &out)?;
    println!("{}", serde_json::to_string_pretty(&verdict)?);
    Ok(verdict.passed)
}
