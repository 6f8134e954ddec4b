mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Failure;

/// Physics-guided deepfake speech detection.
#[derive(Debug, Parser)]
#[command(name = "phonoguard", version, about)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides `seed` in the config (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Physics features of every corpus segment, as CSV.
    Extract,
    /// Fit the standardizer and orthogonal fusion on the corpus.
    Fuse,
    /// Fit fusion and train the dropout classifier on the training split.
    Train,
    /// Monte-Carlo predictions for every corpus segment from saved artifacts.
    Predict,
    /// Metric report, calibration and ECDF tables from saved predictions.
    Metrics,
    /// Write the synthetic corpus to disk (WAV, embeddings, manifest).
    Synth,
    /// Federated simulation with uncertainty-based trust screening.
    Flsim,
    /// Features, fusion, training, inference and evaluation in one run.
    Pipeline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Extract => "extract",
            Command::Fuse => "fuse",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Metrics => "metrics",
            Command::Synth => "synth",
            Command::Flsim => "flsim",
            Command::Pipeline => "pipeline",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let args = commands::Args {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        command: cli.command.name(),
    };
    let result = match cli.command {
        Command::Extract => commands::run(&args, commands::extract),
        Command::Fuse => commands::run(&args, commands::fuse),
        Command::Train => commands::run(&args, commands::train),
        Command::Predict => commands::run(&args, commands::predict),
        Command::Metrics => commands::run(&args, commands::metrics),
        Command::Synth => commands::run(&args, commands::synth),
        Command::Flsim => commands::run(&args, commands::flsim),
        Command::Pipeline => commands::run(&args, commands::pipeline),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("{failed} input(s) failed; see the messages above");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
