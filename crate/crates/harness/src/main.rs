use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use otfs_harness::{run, write_outcome, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "otfs-sim", version, about = "CP-OTFS link-level experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form DD model against the sampled waveform chain
    IorValidate(Common),
    /// Uncoded BER, true-model detector against equal-CP-assumed detector
    BerSweep(Common),
    /// BER with perfect, ML-estimated and threshold-estimated CSI
    CeCompare(Common),
    /// Impulse-response maps of the reduced-CP and CP-OTFS operators
    ChannelResponse(Common),
    /// Print a built-in config as JSON
    Preset {
        #[arg(value_parser = parse_kind)]
        experiment: ExperimentKind,
        #[arg(long)]
        full_scale: bool,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; the built-in preset is used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use the N = M = 128 preset instead of the desk-scale one
    #[arg(long)]
    full_scale: bool,
    /// Override the number of trials
    #[arg(long)]
    trials: Option<usize>,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn execute(kind: ExperimentKind, args: Common) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::preset(kind, args.full_scale),
    };
    if cfg.kind != kind {
        bail!("config describes {}, not {}", cfg.kind.name(), kind.name());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    let outcome = run(&cfg)?;
    write_outcome(&cfg, &outcome, &args.out)?;
    for (name, _) in &outcome.files {
        println!("wrote {}", args.out.join(name).display());
    }
    for v in &outcome.violations {
        eprintln!("invariant violated: {v}");
    }
    Ok(outcome.violations.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::IorValidate(a) => execute(ExperimentKind::IorValidate, a),
        Command::BerSweep(a) => execute(ExperimentKind::BerSweep, a),
        Command::CeCompare(a) => execute(ExperimentKind::CeCompare, a),
        Command::ChannelResponse(a) => execute(ExperimentKind::ChannelResponse, a),
        Command::Preset { experiment, full_scale } => {
            let cfg = ExperimentConfig::preset(experiment, full_scale);
            serde_json::to_string_pretty(&cfg).map(|s| println!("{s}")).map(|_| true).map_err(Into::into)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
