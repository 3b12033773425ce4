//! `cdm` — distribution-free confidence intervals for individual treatment
//! effects, from data generation through replicated benchmarking.

use cdm_cli::{
    cmd_experiment, cmd_gen_data, cmd_inspect, cmd_predict, cmd_train, ExperimentConfig,
    TrainKind,
};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "cdm", version, about = "Conformal diffusion intervals for treatment effects")]
struct Cli {
    /// Declarative TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed override (takes precedence over the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path (file or directory, command-dependent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker pool size for experiment cells (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Verbose logging (per-epoch training losses at debug level).
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreSource {
    Diffusion,
    Mlp,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset CSV (synthetic, or semi-synthetic over a table).
    GenData,
    /// Train the generative score source on treated training rows.
    Train {
        /// Tagged dataset CSV produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Which score source to fit.
        #[arg(long, value_enum, default_value = "diffusion")]
        method: ScoreSource,
    },
    /// Construct prediction sets for every test row of a tagged dataset.
    Predict {
        /// Model checkpoint written by train.
        #[arg(long)]
        model: PathBuf,
        /// Tagged dataset CSV.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the full (method × replicate) experiment grid.
    Experiment,
    /// Summarize a results document.
    Inspect {
        /// Results CSV written by experiment.
        #[arg(long)]
        results: PathBuf,
        /// Externally produced per-replicate CSVs to merge (reserved method
        /// slots such as cqr and causal_forest).
        #[arg(long)]
        external: Vec<PathBuf>,
        /// Nominal miscoverage used for flagging.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Aggregate across mismatched config hashes.
        #[arg(long)]
        force: bool,
    },
}

fn load_config(path: &Option<PathBuf>) -> cdm_core::error::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> cdm_core::error::Result<()> {
    match cli.command {
        Command::GenData => {
            let config = load_config(&cli.config)?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("dataset.csv"));
            cmd_gen_data(&config, cli.seed, &out)
        }
        Command::Train { data, method } => {
            let config = load_config(&cli.config)?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("model.ckpt"));
            let kind = match method {
                ScoreSource::Diffusion => TrainKind::Diffusion,
                ScoreSource::Mlp => TrainKind::Mlp,
            };
            cmd_train(&config, kind, cli.seed, &data, &out)
        }
        Command::Predict { model, data } => {
            let config = load_config(&cli.config)?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("predictions.jsonl"));
            cmd_predict(&config, cli.seed, &model, &data, &out)
        }
        Command::Experiment => {
            let config = load_config(&cli.config)?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("results"));
            let summary = cmd_experiment(&config, cli.seed, cli.workers, &out)?;
            print!("{summary}");
            Ok(())
        }
        Command::Inspect {
            results,
            external,
            alpha,
            force,
        } => {
            let report = cmd_inspect(&results, &external, alpha, force)?;
            print!("{report}");
            Ok(())
        }
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .filter_level(level)
        .format_timestamp_millis()
        .init();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
