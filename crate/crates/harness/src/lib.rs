//! Seeded Monte-Carlo experiments over the CP-OTFS link: model validation,
//! mismatch BER sweeps, channel-estimation comparisons and impulse-response maps.

pub mod config;
pub mod experiments;
pub mod rng;

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

pub use config::{ChannelSource, DetectorMode, ExperimentConfig, ExperimentKind};
pub use experiments::{
    run_ber_sweep, run_ce_compare, run_channel_response, run_ior_validate, BerRow, CeMethod, CeRow, IorRow,
    ResponseMap, IOR_TOLERANCE,
};

/// Result files of one run plus any violated invariants.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// `(file name, contents)`
    pub files: Vec<(String, String)>,
    pub violations: Vec<String>,
}

pub fn ior_csv(rows: &[IorRow]) -> String {
    let mut s = String::from("trial,n_hat,max_abs_err,rel_fro_err\n");
    for r in rows {
        writeln!(s, "{},{},{:e},{:e}", r.trial, r.n_hat, r.max_abs_err, r.rel_fro_err).unwrap();
    }
    s
}

pub fn ber_csv(rows: &[BerRow]) -> String {
    let mut s = String::from("cp_ratio,snr_db,detector,bits,bit_errors,ber,frames_converged\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{:e},{}",
            r.cp_ratio,
            r.snr_db,
            r.mode.name(),
            r.bits,
            r.bit_errors,
            r.ber(),
            r.frames_converged
        )
        .unwrap();
    }
    s
}

pub fn ce_csv(rows: &[CeRow]) -> String {
    let mut s = String::from("snr_db,snr_p_db,method,bits,bit_errors,ber,paths\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{:e},{}",
            r.snr_db,
            r.snr_p_db,
            r.method.name(),
            r.bits,
            r.bit_errors,
            r.ber(),
            r.paths
        )
        .unwrap();
    }
    s
}

/// Long-format `model,k,l,magnitude` grid.
pub fn response_csv(maps: &[ResponseMap]) -> String {
    let mut s = String::from("model,k,l,magnitude\n");
    for map in maps {
        for k in 0..map.n {
            for l in 0..map.m {
                writeln!(s, "{},{},{},{:e}", map.model, k, l, map.magnitude[k * map.m + l]).unwrap();
            }
        }
    }
    s
}

pub fn response_summary_csv(maps: &[ResponseMap]) -> String {
    let mut s = String::from("model,tap_count,support\n");
    for map in maps {
        writeln!(s, "{},{},{}", map.model, map.tap_count, map.support).unwrap();
    }
    s
}

/// Runs the configured experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut out = Outcome::default();
    match cfg.kind {
        ExperimentKind::IorValidate => {
            let rows = run_ior_validate(cfg)?;
            for r in rows.iter().filter(|r| r.n_hat == cfg.frame.n()) {
                if r.rel_fro_err.is_nan() || r.rel_fro_err > IOR_TOLERANCE {
                    out.violations.push(format!(
                        "trial {}: full-window model error {:e} exceeds {:e}",
                        r.trial, r.rel_fro_err, IOR_TOLERANCE
                    ));
                }
            }
            out.files.push(("ior_validate.csv".into(), ior_csv(&rows)));
        }
        ExperimentKind::BerSweep => {
            let rows = run_ber_sweep(cfg)?;
            out.files.push(("ber_sweep.csv".into(), ber_csv(&rows)));
        }
        ExperimentKind::CeCompare => {
            let rows = run_ce_compare(cfg)?;
            out.files.push(("ce_compare.csv".into(), ce_csv(&rows)));
        }
        ExperimentKind::ChannelResponse => {
            let maps = run_channel_response(cfg)?;
            let paths = match &cfg.channel {
                ChannelSource::Explicit { channel } => channel.len(),
                _ => 0,
            };
            for map in &maps {
                let limit = if map.model == "rcp" { paths } else { paths * cfg.frame.n_hat() };
                if map.support > limit {
                    out.violations.push(format!("{} response covers {} cells, limit {limit}", map.model, map.support));
                }
            }
            out.files.push(("channel_response.csv".into(), response_csv(&maps)));
            out.files.push(("channel_response_summary.csv".into(), response_summary_csv(&maps)));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    experiment: &'static str,
    config: &'a ExperimentConfig,
    files: Vec<&'a str>,
    violations: &'a [String],
}

/// Writes the result files and a `run.json` echoing the resolved config.
pub fn write_outcome(cfg: &ExperimentConfig, outcome: &Outcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, text) in &outcome.files {
        let path = dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let record = RunRecord {
        experiment: cfg.kind.name(),
        config: cfg,
        files: outcome.files.iter().map(|f| f.0.as_str()).collect(),
        violations: &outcome.violations,
    };
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&record)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
