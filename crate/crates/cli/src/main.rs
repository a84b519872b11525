//! `caae`: prepare data, train models, run the edge encoder and the server
//! recognizer, and drive experiments.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal
//! error. Log verbosity comes from `CAAE_LOG` (e.g. `CAAE_LOG=debug`).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use caae_core::config::RunConfig;
use caae_core::harness::PipelineVariant;
use caae_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "caae", version, about = "Privacy-preserving activity recognition pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the variant list (experiment) or classifier domain
    /// (train-classifier).
    #[arg(long, value_name = "NAME")]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load or synthesize data, window it, split it and write an archive.
    Prepare(Common),
    /// Train the anonymizing autoencoder and write its bundle.
    TrainAae(Common),
    /// Train the server-side recognizer on anonymized data.
    TrainClassifier(Common),
    /// Edge side: anonymize windows and write ADPCM frames.
    Encode(Common),
    /// Server side: decode frames and write predictions.
    Recognize(Common),
    /// Evaluate the configured variants on shared folds.
    Experiment(Common),
    /// Evaluate along the configured sweep axis.
    Sweep(Common),
    /// Summarize report files in the output directory.
    Report(Common),
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) => 1,
        Error::Io { .. } | Error::Parse { .. } | Error::Shape(_) | Error::Frame(_) | Error::Model(_) | Error::Data(_) => 2,
        Error::NonFinite(_) | Error::Stage { .. } => 3,
    }
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    // An unreadable or malformed config file is a configuration error.
    let mut cfg = RunConfig::load(&common.config).map_err(|e| match e {
        Error::Io { .. } | Error::Parse { .. } => Error::Config(e.to_string()),
        other => other,
    })?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        let cwd = std::env::current_dir().map_err(|e| Error::Io { path: ".".into(), source: e })?;
        cfg.out_dir = cwd.join(out);
    }
    if let Some(v) = &common.variant {
        cfg.variants = vec![v.clone()];
        if matches!(v.parse(), Ok(PipelineVariant::Baseline | PipelineVariant::Aae | PipelineVariant::CAae)) {
            cfg.classifier.variant = v.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let (common, cmd): (&Common, fn(&RunConfig) -> Result<(), Error>) = match &cli.command {
        Command::Prepare(c) => (c, commands::prepare),
        Command::TrainAae(c) => (c, commands::train_aae),
        Command::TrainClassifier(c) => (c, commands::train_classifier),
        Command::Encode(c) => (c, commands::encode),
        Command::Recognize(c) => (c, commands::recognize),
        Command::Experiment(c) => (c, commands::experiment),
        Command::Sweep(c) => (c, commands::sweep),
        Command::Report(c) => (c, commands::report),
    };
    cmd(&load(common)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAAE_LOG", "info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}
