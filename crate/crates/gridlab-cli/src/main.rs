//! Command-line front end for the gridlab pipeline.
//!
//! One configuration file drives everything; subcommands select how far down
//! the pipeline to go. Stages already on disk are reused, so `attack` followed
//! by `report` completes the remaining stages instead of starting over.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use gridlab::config::Config;
use gridlab::grid::GridFormat;
use gridlab::orchestrator::{
    ingest_grid, run_experiment, run_krige, run_timeseries, RunOutcome, StagePlan,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "gridlab",
    version,
    about = "Power-grid robustness laboratory",
    long_about = "Sweeps line-limit profiles over power grids, runs seeded attack/cascade \
campaigns, embeds loaded grids as spring systems, and evaluates how well the cheap \
embedding measures predict expensive cascade outcomes."
)]
struct Cli {
    /// Run configuration file (`key = value` lines); defaults apply if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the worker thread count (0 = one per CPU).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the artifact root directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    /// Single canonical JSON document.
    Json,
    /// Directory holding nodes.csv and edges.csv.
    Csv,
}

impl From<FormatArg> for GridFormat {
    fn from(f: FormatArg) -> GridFormat {
        match f {
            FormatArg::Json => GridFormat::CanonicalJson,
            FormatArg::Csv => GridFormat::NodeEdgeCsv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a grid file to canonical JSON and print its structural summary.
    Ingest {
        /// Grid file (or csv directory) to read.
        #[arg(long)]
        input: PathBuf,
        /// Layout of the input.
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
        /// Where to write the canonical JSON form.
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate the line-limit profile families and stop.
    Profiles,
    /// Run the attack/cascade campaigns.
    Attack,
    /// Compute the spring embeddings.
    Embed,
    /// Compute robustness measures (computes embeddings if missing).
    Metrics,
    /// Cross-validate measures against campaign outcomes (completes earlier
    /// stages if missing).
    Report,
    /// Run the full pipeline.
    Run,
    /// Replay a demand batch against a grid with real line ratings.
    Timeseries {
        /// Grid file; every line needs a capacity rating.
        #[arg(long)]
        grid: PathBuf,
        /// CSV of per-period bus overrides: period,bus_id,generation,demand.
        #[arg(long)]
        batch: PathBuf,
    },
    /// Interpolate an embedding layer of one profile onto a raster.
    Krige {
        /// Network name (the grid's declared name).
        #[arg(long)]
        network: String,
        /// Profile id, as listed in profiles.jsonl.
        #[arg(long)]
        profile: String,
        /// elevation, strain, or tension.
        #[arg(long)]
        layer: String,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn report_outcome(outcome: &RunOutcome) -> anyhow::Result<()> {
    println!("manifest  {}", outcome.manifest_id);
    println!("artifacts {}", outcome.root.display());
    println!(
        "profiles  {} complete ({} computed this run)",
        outcome.completed, outcome.computed
    );
    if !outcome.failures.is_empty() {
        for failure in &outcome.failures {
            eprintln!(
                "failed    {}/{} at {}: {}",
                failure.network, failure.profile_id, failure.stage, failure.error
            );
        }
        bail!(
            "{} stage failure(s); details in {}",
            outcome.failures.len(),
            outcome.root.join("errors.jsonl").display()
        );
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Ingest {
            input,
            format,
            output,
        } => {
            let stats = ingest_grid(input, (*format).into(), output)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Profiles => {
            let config = load_config(&cli)?;
            report_outcome(&run_experiment(&config, StagePlan::default())?)?;
        }
        Command::Attack => {
            let config = load_config(&cli)?;
            let plan = StagePlan {
                campaigns: true,
                ..Default::default()
            };
            report_outcome(&run_experiment(&config, plan)?)?;
        }
        Command::Embed => {
            let config = load_config(&cli)?;
            let plan = StagePlan {
                embeddings: true,
                ..Default::default()
            };
            report_outcome(&run_experiment(&config, plan)?)?;
        }
        Command::Metrics => {
            let config = load_config(&cli)?;
            let plan = StagePlan {
                measures: true,
                ..Default::default()
            };
            report_outcome(&run_experiment(&config, plan)?)?;
        }
        Command::Report => {
            let config = load_config(&cli)?;
            let plan = StagePlan {
                evaluation: true,
                ..Default::default()
            };
            report_outcome(&run_experiment(&config, plan)?)?;
        }
        Command::Run => {
            let config = load_config(&cli)?;
            report_outcome(&run_experiment(&config, StagePlan::everything())?)?;
        }
        Command::Timeseries { grid, batch } => {
            let config = load_config(&cli)?;
            let outcome = run_timeseries(&config, grid, batch)?;
            println!("stamp     {}", outcome.stamp);
            println!("artifacts {}", outcome.out_dir.display());
            println!("periods   {}", outcome.records.len());
            if !outcome.skipped_periods.is_empty() {
                println!("skipped   {:?} (flow solve failed)", outcome.skipped_periods);
            }
        }
        Command::Krige {
            network,
            profile,
            layer,
        } => {
            let config = load_config(&cli)?;
            let paths = run_krige(&config, network, profile, layer)?;
            println!("raster    {}", paths.csv.display());
            println!("values    {}", paths.value_asc.display());
            println!("variance  {}", paths.variance_asc.display());
        }
    }
    Ok(())
}
