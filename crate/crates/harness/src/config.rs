//! Experiment configuration, JSON-loadable, with desk-scale and full-scale presets.

use std::path::Path;

use anyhow::{bail, Context, Result};
use otfs_core::channel::max_doppler_idx;
use otfs_core::detection::MpParams;
use otfs_core::{ChannelSpec, FrameConfig, PowerDelayProfile};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    IorValidate,
    BerSweep,
    CeCompare,
    ChannelResponse,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::IorValidate => "ior-validate",
            ExperimentKind::BerSweep => "ber-sweep",
            ExperimentKind::CeCompare => "ce-compare",
            ExperimentKind::ChannelResponse => "channel-response",
        }
    }
}

/// Where each trial's channel comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ChannelSource {
    /// Random power-delay-profile channel with Jakes Doppler.
    Eva {
        carrier_hz: f64,
        speed_kmh: f64,
        #[serde(default = "PowerDelayProfile::eva")]
        profile: PowerDelayProfile,
    },
    /// `paths` paths in distinct delay bins covered by the regular CP, uniform
    /// Doppler in `[-max_doppler, max_doppler]`, total mean power one.
    RandomOnGrid { paths: usize, max_doppler: i64 },
    /// The same fixed channel for every trial.
    Explicit { channel: ChannelSpec },
}

impl ChannelSource {
    /// Largest Doppler index this source can produce.
    pub fn k_max(&self, frame: &FrameConfig) -> usize {
        match self {
            ChannelSource::Eva { carrier_hz, speed_kmh, .. } => {
                max_doppler_idx(frame, *carrier_hz, *speed_kmh) as usize
            }
            ChannelSource::RandomOnGrid { max_doppler, .. } => max_doppler.unsigned_abs() as usize,
            ChannelSource::Explicit { channel } => {
                channel.paths.iter().map(|p| p.doppler_idx.unsigned_abs() as usize).max().unwrap_or(0)
            }
        }
    }

    /// Largest delay bin this source can produce.
    pub fn l_max(&self, frame: &FrameConfig) -> Result<usize> {
        Ok(match self {
            ChannelSource::Eva { profile, .. } => profile.binned(frame)?.iter().map(|b| b.0).max().unwrap_or(0),
            ChannelSource::RandomOnGrid { .. } => frame.cp_reg_samples(),
            ChannelSource::Explicit { channel } => channel.paths.iter().map(|p| p.delay_idx).max().unwrap_or(0),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorMode {
    /// Operator built with the true unequal-CP spreading function.
    UnequalCp,
    /// Operator built as if every CP had the regular length.
    EqualCpAssumed,
}

impl DetectorMode {
    pub fn name(self) -> &'static str {
        match self {
            DetectorMode::UnequalCp => "unequal-cp",
            DetectorMode::EqualCpAssumed => "equal-cp-assumed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpConfig {
    pub max_iters: usize,
    pub damping: f64,
    pub convergence_eps: f64,
}

impl Default for MpConfig {
    fn default() -> Self {
        let p = MpParams::default();
        MpConfig { max_iters: p.max_iters, damping: p.damping, convergence_eps: p.convergence_eps }
    }
}

impl From<MpConfig> for MpParams {
    fn from(c: MpConfig) -> Self {
        MpParams { max_iters: c.max_iters, damping: c.damping, convergence_eps: c.convergence_eps }
    }
}

/// Embedded-pilot settings for `ce-compare`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    /// Doppler margin added to `k_max` for the guard and observation window.
    pub spread_margin: usize,
    /// Detection threshold is `threshold_scale / sqrt(SNR_p)`.
    pub threshold_scale: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        PilotConfig { spread_margin: 10, threshold_scale: 3.0 }
    }
}

/// Impulse-response map settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseConfig {
    /// Support threshold relative to the peak.
    pub threshold: f64,
    /// Input cell `(k, l)` excited by the impulse.
    pub impulse_at: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub frame: FrameConfig,
    pub channel: ChannelSource,
    /// Data SNR points, `1 / sigma^2` per DD symbol.
    #[serde(default)]
    pub snr_db: Vec<f64>,
    /// Pilot SNR points, `|x_p|^2 / sigma^2`.
    #[serde(default)]
    pub snr_p_db: Vec<f64>,
    /// Frames per SNR point (trials for `ior-validate`).
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub cp_ratios: Vec<f64>,
    #[serde(default = "default_modes")]
    pub detector_modes: Vec<DetectorMode>,
    #[serde(default = "default_bits")]
    pub bits_per_symbol: usize,
    #[serde(default)]
    pub mp: MpConfig,
    #[serde(default)]
    pub pilot: PilotConfig,
    #[serde(default)]
    pub response: Option<ResponseConfig>,
}

fn default_modes() -> Vec<DetectorMode> {
    vec![DetectorMode::UnequalCp, DetectorMode::EqualCpAssumed]
}

fn default_bits() -> usize {
    2
}

/// Fixed five-path channel used for the impulse-response maps.
pub fn five_path_channel() -> ChannelSpec {
    use num_complex::Complex64;
    use otfs_core::PathSpec;
    ChannelSpec::new(vec![
        PathSpec::new(Complex64::new(0.70, 0.00), 0, 0),
        PathSpec::new(Complex64::new(0.35, 0.40), 1, 3),
        PathSpec::new(Complex64::new(-0.30, 0.25), 2, -2),
        PathSpec::new(Complex64::new(0.20, -0.15), 3, 5),
        PathSpec::new(Complex64::new(0.10, 0.12), 5, -4),
    ])
}

impl ExperimentConfig {
    /// Built-in configuration for an experiment. Desk scale uses `N = M = 32`
    /// (`16` for `ior-validate`, 10-sample regular CP for `ber-sweep`);
    /// full scale uses `N = M = 128`, `S = 8`, 5-sample regular CP,
    /// `T_long = 1.2 T_reg` and `N_hat = 20`.
    pub fn preset(kind: ExperimentKind, full_scale: bool) -> Self {
        let full = FrameConfig::from_samples(128, 128, 15e3, 8, 5, 6, 20).unwrap();
        let eva = ChannelSource::Eva { carrier_hz: 5e9, speed_kmh: 500.0, profile: PowerDelayProfile::eva() };
        let base = |frame: FrameConfig, channel: ChannelSource, trials: usize| ExperimentConfig {
            kind,
            frame,
            channel,
            snr_db: Vec::new(),
            snr_p_db: Vec::new(),
            trials,
            seed: 1,
            cp_ratios: Vec::new(),
            detector_modes: default_modes(),
            bits_per_symbol: 2,
            mp: MpConfig::default(),
            pilot: PilotConfig::default(),
            response: None,
        };
        match kind {
            ExperimentKind::IorValidate => {
                if full_scale {
                    base(full, ChannelSource::RandomOnGrid { paths: 5, max_doppler: 20 }, 10)
                } else {
                    let frame = FrameConfig::from_samples(16, 16, 15e3, 4, 5, 6, 4).unwrap();
                    base(frame, ChannelSource::RandomOnGrid { paths: 3, max_doppler: 7 }, 20)
                }
            }
            ExperimentKind::BerSweep => {
                let (frame, trials) = if full_scale {
                    (full, 10)
                } else {
                    (FrameConfig::from_samples(32, 32, 15e3, 8, 10, 12, 32).unwrap(), 49)
                };
                ExperimentConfig {
                    snr_db: vec![10.0, 12.0, 14.0, 16.0, 18.0, 20.0],
                    cp_ratios: vec![1.2, 1.8],
                    ..base(frame, eva, trials)
                }
            }
            ExperimentKind::CeCompare => {
                let (frame, trials, pilot) = if full_scale {
                    (full, 10, PilotConfig { spread_margin: 20, threshold_scale: 3.0 })
                } else {
                    (FrameConfig::from_samples(32, 32, 15e3, 8, 5, 6, 32).unwrap(), 54, PilotConfig::default())
                };
                ExperimentConfig {
                    snr_db: vec![8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0],
                    snr_p_db: vec![35.0],
                    pilot,
                    ..base(frame, eva, trials)
                }
            }
            ExperimentKind::ChannelResponse => {
                let frame = FrameConfig::from_samples(32, 32, 15e3, 8, 5, 6, 20).unwrap();
                ExperimentConfig {
                    response: Some(ResponseConfig { threshold: 0.01, impulse_at: (16, 8) }),
                    ..base(frame, ChannelSource::Explicit { channel: five_path_channel() }, 1)
                }
            }
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        let needs_snr = matches!(self.kind, ExperimentKind::BerSweep | ExperimentKind::CeCompare);
        if needs_snr && self.snr_db.is_empty() {
            bail!("{} needs a non-empty snr_db list", self.kind.name());
        }
        match self.kind {
            ExperimentKind::BerSweep => {
                if self.cp_ratios.is_empty() || self.detector_modes.is_empty() {
                    bail!("ber-sweep needs cp_ratios and detector_modes");
                }
                for &r in &self.cp_ratios {
                    self.frame.with_cp_ratio(r)?;
                }
            }
            ExperimentKind::CeCompare => {
                if self.snr_p_db.is_empty() {
                    bail!("ce-compare needs a non-empty snr_p_db list");
                }
            }
            ExperimentKind::ChannelResponse => {
                if self.response.is_none() {
                    bail!("channel-response needs a response block");
                }
                if !matches!(self.channel, ChannelSource::Explicit { .. }) {
                    bail!("channel-response needs an explicit channel");
                }
            }
            ExperimentKind::IorValidate => {}
        }
        if let ChannelSource::Explicit { channel } = &self.channel {
            channel.validate(&self.frame)?;
        }
        if let ChannelSource::RandomOnGrid { paths, max_doppler } = &self.channel {
            if *paths == 0 || *paths > self.frame.cp_reg_samples() + 1 {
                bail!("random channel needs 1..={} paths in distinct delay bins", self.frame.cp_reg_samples() + 1);
            }
            if *max_doppler < 0 || *max_doppler >= (self.frame.n() / 2) as i64 {
                bail!("max_doppler must lie in [0, N/2)");
            }
        }
        otfs_core::detection::Constellation::qam(self.bits_per_symbol)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for kind in [
            ExperimentKind::IorValidate,
            ExperimentKind::BerSweep,
            ExperimentKind::CeCompare,
            ExperimentKind::ChannelResponse,
        ] {
            for full in [false, true] {
                let cfg = ExperimentConfig::preset(kind, full);
                cfg.validate().unwrap();
                let text = serde_json::to_string(&cfg).unwrap();
                let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
                assert_eq!(back, cfg);
            }
        }
    }

    #[test]
    fn desk_eva_limits() {
        let cfg = ExperimentConfig::preset(ExperimentKind::CeCompare, false);
        assert_eq!(cfg.channel.k_max(&cfg.frame), 5);
        assert_eq!(cfg.channel.l_max(&cfg.frame).unwrap(), 1);
        let full = ExperimentConfig::preset(ExperimentKind::CeCompare, true);
        assert_eq!(full.channel.k_max(&full.frame), 20);
        assert_eq!(full.channel.l_max(&full.frame).unwrap(), 5);
    }

    #[test]
    fn rejects_empty_sweeps() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::BerSweep, false);
        cfg.snr_db.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::preset(ExperimentKind::BerSweep, false);
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
    }
}
