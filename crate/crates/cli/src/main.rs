use std::path::PathBuf;
use std::process::ExitCode;

use arn_cli::{cmd_bench, cmd_eval, cmd_synth, cmd_train, commands, RunConfig};
use arn_core::parallel;
use clap::{Parser, Subcommand};
use log::LevelFilter;

#[derive(Parser)]
#[command(name = "arn", version, about = "Asymmetric residual networks for sensor activity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for data-parallel kernels and bench runs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV.
    Synth,
    /// Train the configured model and write checkpoint, history and report.
    Train,
    /// Evaluate a checkpoint on the configured test split.
    Eval {
        /// Defaults to `<out>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare the configured methods and window combinations.
    Bench,
}

fn init_logging() {
    let level = match std::env::var("ARN_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("debug") => LevelFilter::Debug,
        Ok("info") | Err(_) => LevelFilter::Info,
        Ok(other) => {
            eprintln!("warning: ARN_LOG={other} is not one of quiet, info, debug; using info");
            LevelFilter::Info
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn run(cli: Cli) -> arn_core::Result<bool> {
    let path = cli
        .config
        .ok_or_else(|| arn_core::Error::Config("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    cfg.validate()?;
    match cli.command {
        Command::Synth => {
            let (file, table) = cmd_synth(&cfg)?;
            print!("{table}");
            log::info!("wrote {}", file.display());
        }
        Command::Train => {
            let outcome = cmd_train(&cfg)?;
            print!("{}", outcome.report);
            log::info!("wrote {}", outcome.checkpoint.display());
        }
        Command::Eval { checkpoint } => {
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.out.join(commands::CHECKPOINT_FILE));
            print!("{}", cmd_eval(&cfg, &checkpoint)?);
        }
        Command::Bench => {
            let report = cmd_bench(&cfg)?;
            print!("{report}");
            for r in report.failures() {
                eprintln!("error: {} {} failed: {}", r.method, r.window, r.result.as_ref().unwrap_err());
            }
            return Ok(report.survivors() > 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    if cfg!(not(feature = "parallel")) && cli.threads > 1 {
        log::warn!("built without the `parallel` feature; running on one thread");
    }
    match parallel::with_threads(cli.threads, || run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
