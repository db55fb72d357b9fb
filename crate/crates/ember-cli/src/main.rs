//! `ember` — fit and score spatiotemporal marked point process models for
//! wildfire-type data from a single key=value configuration file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::RunContext;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "ember",
    version,
    about = "Spatiotemporal marked point processes with moderate and extreme marks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: `out` next to the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Base seed; every random quantity derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap the worker thread pool.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Give the literal below-quantile FWI class the large selection mass.
    #[arg(long, global = true)]
    invert_fwi_classes: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Mean-excess, shape-stability and multiple-threshold diagnostics.
    DiagnoseThreshold,
    /// Stratified FWI-weighted subsample of zero-count pixel-days.
    Subsample,
    /// Fit a model preset and write the fit container.
    Fit,
    /// Forward-simulate a marked dataset from the prior.
    Simulate,
    /// Predictive scores of a fitted model on validation data.
    Score,
    /// Excursion functions of a fitted latent field.
    Excursion,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        // library parallelism uses the global rayon pool
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    let config_path = cli
        .config
        .ok_or_else(|| anyhow::anyhow!("--config is required"))?;
    let cfg = RunConfig::load(&config_path)?;
    let out_dir = cli
        .out
        .or_else(|| cfg.get("out").map(PathBuf::from))
        .unwrap_or_else(|| cfg.base_dir.join("out"));
    std::fs::create_dir_all(&out_dir)?;
    let seed = match cli.seed {
        Some(s) => s,
        None => cfg.parse("seed", 0u64)?,
    };
    let ctx = RunContext {
        cfg,
        out_dir,
        seed,
        invert_fwi_classes: cli.invert_fwi_classes,
    };
    let artifacts = match cli.command {
        Command::DiagnoseThreshold => commands::diagnose_threshold(&ctx)?,
        Command::Subsample => commands::subsample(&ctx)?,
        Command::Fit => commands::fit(&ctx)?,
        Command::Simulate => commands::simulate(&ctx)?,
        Command::Score => commands::run_score(&ctx)?,
        Command::Excursion => commands::excursion(&ctx)?,
    };
    for a in artifacts {
        println!("{}", a.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default()
            .filter_or("EMBER_LOG", "error")
            .write_style("EMBER_LOG_STYLE"),
    )
    .format_timestamp(None)
    .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let msg: String = format!("{err:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
