//! `cdemand`: generate data, fit censored and uncensored models, evaluate
//! and report.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use censored_demand::pipeline::{self, RunConfig};
use censored_demand::Error;
use clap::{Parser, Subcommand};
use log::{error, info, warn};

#[derive(Debug, Parser)]
#[command(name = "cdemand", version, about = "Censorship-aware demand prediction")]
struct Cli {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the split and generator seeds too.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory, overriding `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset, its vocabulary and ground truth.
    Generate,
    /// Fit every configured family with and without censoring, and the ensembles.
    Fit,
    /// Score the fitted models and write evaluation.json.
    Evaluate,
    /// Render the tables of a fitted run directory to report.json, report.txt and stdout.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    if let Some(out) = &cli.out {
        config.output = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::validation(format!("cannot size the thread pool: {e}")))?;
    }
    let started = Instant::now();
    match cli.command {
        Command::Generate => {
            let layout = pipeline::cmd_generate(&load_config(cli)?)?;
            println!("{}", layout.dataset().display());
        }
        Command::Fit => {
            let layout = pipeline::cmd_fit(&load_config(cli)?)?;
            println!("{}", layout.root.display());
        }
        Command::Evaluate => {
            let config = load_config(cli)?;
            pipeline::cmd_evaluate(&config)?;
            println!("{}", pipeline::RunLayout::new(&config.output).evaluation().display());
        }
        Command::Report => {
            // The run directory carries its own config.
            if cli.seed.is_some() {
                warn!("--seed is ignored by report");
            }
            let dir = match &cli.out {
                Some(out) => out.clone(),
                None => load_config(cli)?.output,
            };
            print!("{}", pipeline::cmd_report(&dir)?);
        }
    }
    info!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
