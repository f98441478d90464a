//! Pipeline driver for the reduced Lorenz 96 experiments.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{PipelineConfig, Scale};
use error::CliError;

#[derive(Parser)]
#[command(version, about = "Simulate, fit, validate and forecast reduced Lorenz 96 models")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Preset observation count and forecast segment count.
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate full-model observations.
    Simulate,
    /// Fit NARMAX and POLYAR to the dataset.
    Fit,
    /// Long-run statistics of both reduced models against the data.
    Validate,
    /// Ensemble forecast skill against fresh full-model segments.
    Forecast,
    /// Every stage for both reference sampling intervals.
    ReproPaper,
}

fn resolve(cli: &Cli) -> Result<(PipelineConfig, PathBuf), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this subcommand".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(scale) = cli.scale {
        cfg.apply_scale(scale);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    Ok((cfg, out))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.command == Command::ReproPaper {
        let base = cli.config.as_ref().map(|p| PipelineConfig::load(p)).transpose()?;
        let out = cli
            .out
            .clone()
            .or_else(|| base.as_ref().map(|b| b.out_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        return commands::repro_paper(base.as_ref(), cli.scale.unwrap_or(Scale::Desk), cli.seed, &out);
    }
    let (cfg, out) = resolve(cli)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Fit => commands::fit_models(&cfg, &out),
        Command::Validate => commands::validate(&cfg, &out),
        Command::Forecast => commands::run_forecasts(&cfg, &out),
        Command::ReproPaper => unreachable!(),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors are configuration errors; help and version exit cleanly.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(&cli) {
        log::error!("{e}");
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
