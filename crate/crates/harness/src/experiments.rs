//! The four experiments. Each trial draws its randomness from named streams
//! keyed by trial index, trials run in parallel, and results are aggregated
//! in a fixed order, so output is independent of the thread count.

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use otfs_core::channel::{apply, complex_gaussian, gen_eva};
use otfs_core::detection::{bit_errors, map_bits, mp_detect, mp_detect_masked, Constellation, MpParams};
use otfs_core::effective::{build_matrix, build_matrix_equal_cp, predict_ydd, rcp_reference, sparsity_metrics};
use otfs_core::estimation::{embed_pilot, extract_observation, ml_estimate, threshold_estimate, PilotLayout};
use otfs_core::{demodulate, isfft, modulate, sfft, ChannelSpec, DdGrid, FrameConfig, PathSpec};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{ChannelSource, DetectorMode, ExperimentConfig};
use crate::rng::stream;

/// Full-window agreement required between the closed-form model and the
/// sampled waveform chain.
pub const IOR_TOLERANCE: f64 = 1e-9;

fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Draws one channel realization for `trial`.
pub fn draw_channel(source: &ChannelSource, frame: &FrameConfig, seed: u64, trial: u64) -> Result<ChannelSpec> {
    let mut rng = stream(seed, trial, "channel");
    Ok(match source {
        ChannelSource::Eva { carrier_hz, speed_kmh, profile } => {
            gen_eva(frame, profile, *carrier_hz, *speed_kmh, &mut rng)?
        }
        ChannelSource::RandomOnGrid { paths, max_doppler } => {
            let mut delays: Vec<usize> = (0..=frame.cp_reg_samples()).collect();
            let var = 1.0 / *paths as f64;
            let mut out = Vec::with_capacity(*paths);
            for _ in 0..*paths {
                let l = delays.swap_remove(rng.random_range(0..delays.len()));
                let k = rng.random_range(-*max_doppler..=*max_doppler);
                out.push(PathSpec::new(complex_gaussian(&mut rng, var), l, k));
            }
            ChannelSpec::new(out)
        }
        ChannelSource::Explicit { channel } => channel.clone(),
    })
}

fn random_bits(n: usize, rng: &mut impl Rng) -> Vec<bool> {
    (0..n).map(|_| rng.random()).collect()
}

/// DD frame through modulation, the channel with time-domain noise variance
/// `M * noise_var`, and demodulation.
fn transmit(x: &DdGrid, ch: &ChannelSpec, frame: &FrameConfig, noise_var: f64, rng: &mut impl Rng) -> Result<DdGrid> {
    let tx = modulate(&isfft(x, frame)?, frame)?;
    let rx = apply(&tx, ch, frame, frame.m() as f64 * noise_var, rng)?;
    Ok(sfft(&demodulate(&rx, frame)?, frame)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IorRow {
    pub trial: usize,
    pub n_hat: usize,
    pub max_abs_err: f64,
    pub rel_fro_err: f64,
}

/// Compares the closed-form prediction against the waveform chain at the
/// full window and at the configured `N_hat`.
pub fn run_ior_validate(cfg: &ExperimentConfig) -> Result<Vec<IorRow>> {
    let full = cfg.frame.with_n_hat(cfg.frame.n())?;
    let mut windows = vec![cfg.frame.n()];
    if cfg.frame.n_hat() != cfg.frame.n() {
        windows.push(cfg.frame.n_hat());
    }
    let rows: Vec<Vec<IorRow>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<IorRow>> {
            let ch = draw_channel(&cfg.channel, &full, cfg.seed, t as u64)?;
            let mut rng = stream(cfg.seed, t as u64, "symbols");
            let x = DdGrid::from_fn(full.n(), full.m(), |_, _| complex_gaussian(&mut rng, 1.0));
            let sim = transmit(&x, &ch, &full, 0.0, &mut rng)?;
            windows
                .iter()
                .map(|&n_hat| {
                    let pred = predict_ydd(&x, &ch, &full.with_n_hat(n_hat)?)?;
                    Ok(IorRow {
                        trial: t,
                        n_hat,
                        max_abs_err: pred.max_abs_diff(&sim),
                        rel_fro_err: pred.rel_frobenius_err(&sim),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerRow {
    pub cp_ratio: f64,
    pub snr_db: f64,
    pub mode: DetectorMode,
    pub bits: usize,
    pub bit_errors: usize,
    pub frames_converged: usize,
}

impl BerRow {
    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / self.bits as f64
    }
}

/// Uncoded BER of the true-model detector against the equal-CP-assumed one.
/// A trial reuses its channel, bits and noise across every CP ratio and
/// detector so the comparisons are paired.
pub fn run_ber_sweep(cfg: &ExperimentConfig) -> Result<Vec<BerRow>> {
    let constellation = Constellation::qam(cfg.bits_per_symbol)?;
    let mp: MpParams = cfg.mp.into();
    let frames: Vec<FrameConfig> =
        cfg.cp_ratios.iter().map(|&r| cfg.frame.with_cp_ratio(r)).collect::<otfs_core::Result<_>>()?;
    let bits_per_frame = cfg.frame.cells() * cfg.bits_per_symbol;

    let mut jobs = Vec::new();
    for (ri, _) in frames.iter().enumerate() {
        for (si, _) in cfg.snr_db.iter().enumerate() {
            for t in 0..cfg.trials {
                jobs.push((ri, si, t));
            }
        }
    }
    // (errors, converged) per detector mode
    let results: Vec<Vec<(usize, bool)>> = jobs
        .par_iter()
        .map(|&(ri, si, t)| -> Result<Vec<(usize, bool)>> {
            let frame = &frames[ri];
            let ch = draw_channel(&cfg.channel, frame, cfg.seed, t as u64)?;
            let bits = random_bits(bits_per_frame, &mut stream(cfg.seed, t as u64, "bits"));
            let x = map_bits(&bits, &constellation, frame.n(), frame.m(), None)?;
            let snr = db_to_lin(cfg.snr_db[si]);
            let noise_var = 1.0 / snr;
            let mut noise = stream(cfg.seed, t as u64, &format!("noise/{}", cfg.snr_db[si]));
            let y = transmit(&x, &ch, frame, noise_var, &mut noise)?;
            cfg.detector_modes
                .iter()
                .map(|mode| {
                    let h = match mode {
                        DetectorMode::UnequalCp => build_matrix(&ch, frame),
                        DetectorMode::EqualCpAssumed => build_matrix_equal_cp(&ch, frame),
                    };
                    let det = mp_detect(&y, &h, noise_var, &constellation, &mp)?;
                    Ok((bit_errors(&det.bits, &bits), det.converged))
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (ri, &ratio) in cfg.cp_ratios.iter().enumerate() {
        for (si, &snr_db) in cfg.snr_db.iter().enumerate() {
            for (mi, &mode) in cfg.detector_modes.iter().enumerate() {
                let mut row = BerRow { cp_ratio: ratio, snr_db, mode, bits: 0, bit_errors: 0, frames_converged: 0 };
                for (job, res) in jobs.iter().zip(&results) {
                    if job.0 == ri && job.1 == si {
                        row.bits += bits_per_frame;
                        row.bit_errors += res[mi].0;
                        row.frames_converged += res[mi].1 as usize;
                    }
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeMethod {
    Perfect,
    Ml,
    Threshold,
}

impl CeMethod {
    pub const ALL: [CeMethod; 3] = [CeMethod::Perfect, CeMethod::Ml, CeMethod::Threshold];

    pub fn name(self) -> &'static str {
        match self {
            CeMethod::Perfect => "perfect",
            CeMethod::Ml => "ml",
            CeMethod::Threshold => "threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeRow {
    pub snr_db: f64,
    pub snr_p_db: f64,
    pub method: CeMethod,
    pub bits: usize,
    pub bit_errors: usize,
    /// Estimated paths summed over frames (true paths for `Perfect`).
    pub paths: usize,
}

impl CeRow {
    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / self.bits as f64
    }
}

/// Pilot layout used by `ce-compare` for a given pilot amplitude.
pub fn pilot_layout(cfg: &ExperimentConfig, x_p: f64) -> Result<PilotLayout> {
    let k_max = cfg.channel.k_max(&cfg.frame);
    let l_max = cfg.channel.l_max(&cfg.frame)?;
    PilotLayout::centered(&cfg.frame, Complex64::new(x_p, 0.0), k_max, l_max, cfg.pilot.spread_margin)
        .context("pilot layout")
}

/// BER with perfect CSI, the ML estimator and the threshold baseline, all on
/// the same frames; noise depends only on the trial and data SNR. The known pilot response is removed with each method's
/// own channel estimate before data detection.
pub fn run_ce_compare(cfg: &ExperimentConfig) -> Result<Vec<CeRow>> {
    let frame = &cfg.frame;
    let constellation = Constellation::qam(cfg.bits_per_symbol)?;
    let mp: MpParams = cfg.mp.into();
    let base = pilot_layout(cfg, 1.0)?;
    let mask = base.data_mask(frame);
    let bits_per_frame = base.data_cells(frame) * cfg.bits_per_symbol;
    if bits_per_frame == 0 {
        bail!("pilot guard leaves no data cells");
    }

    let mut jobs = Vec::new();
    for si in 0..cfg.snr_db.len() {
        for pi in 0..cfg.snr_p_db.len() {
            for t in 0..cfg.trials {
                jobs.push((si, pi, t));
            }
        }
    }
    // (errors, paths) per method
    let results: Vec<[(usize, usize); 3]> = jobs
        .par_iter()
        .map(|&(si, pi, t)| -> Result<[(usize, usize); 3]> {
            let ch = draw_channel(&cfg.channel, frame, cfg.seed, t as u64)?;
            let bits = random_bits(bits_per_frame, &mut stream(cfg.seed, t as u64, "bits"));
            let data = map_bits(&bits, &constellation, frame.n(), frame.m(), Some(&mask))?;
            let snr = db_to_lin(cfg.snr_db[si]);
            let noise_var = 1.0 / snr;
            let snr_p = db_to_lin(cfg.snr_p_db[pi]);
            let x_p = (snr_p * noise_var).sqrt();
            let layout = base.with_pilot(Complex64::new(x_p, 0.0));
            let x = embed_pilot(&data, &layout, frame)?;
            let tag = format!("noise/{}", cfg.snr_db[si]);
            let y = transmit(&x, &ch, frame, noise_var, &mut stream(cfg.seed, t as u64, &tag))?;
            let obs = extract_observation(&y, &layout, frame)?;
            let threshold = cfg.pilot.threshold_scale / snr_p.sqrt();
            let pilot_only = layout.pilot_frame(frame);

            let mut out = [(0, 0); 3];
            for (i, method) in CeMethod::ALL.iter().enumerate() {
                let (h, paths) = match method {
                    CeMethod::Perfect => (build_matrix(&ch, frame), ch.len()),
                    CeMethod::Ml => {
                        let est = ml_estimate(&obs, &layout, frame, threshold)?;
                        (build_matrix(&est, frame), est.len())
                    }
                    CeMethod::Threshold => {
                        let h = threshold_estimate(&obs, &layout, frame, threshold * x_p);
                        let n = h.taps.iter().filter(|t| t.in_k == 0 && t.in_l == 0).count();
                        (h, n)
                    }
                };
                if h.is_empty() {
                    // nothing detected: every data cell decides label 0
                    out[i] = (bits.iter().filter(|&&b| b).count(), 0);
                    continue;
                }
                let pilot_rx = h.apply(&pilot_only);
                let mut y_data = y.clone();
                for (v, p) in y_data.as_mut_slice().iter_mut().zip(pilot_rx.as_slice()) {
                    *v -= p;
                }
                let det = mp_detect_masked(&y_data, &h, noise_var, &constellation, &mp, Some(&mask))?;
                out[i] = (bit_errors(&det.bits, &bits), paths);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (si, &snr_db) in cfg.snr_db.iter().enumerate() {
        for (pi, &snr_p_db) in cfg.snr_p_db.iter().enumerate() {
            for (mi, &method) in CeMethod::ALL.iter().enumerate() {
                let mut row = CeRow { snr_db, snr_p_db, method, bits: 0, bit_errors: 0, paths: 0 };
                for (job, res) in jobs.iter().zip(&results) {
                    if job.0 == si && job.1 == pi {
                        row.bits += bits_per_frame;
                        row.bit_errors += res[mi].0;
                        row.paths += res[mi].1;
                    }
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub model: &'static str,
    pub n: usize,
    pub m: usize,
    pub tap_count: usize,
    pub support: usize,
    /// Peak-normalized `|response|`, row-major over `(k, l)`.
    pub magnitude: Vec<f64>,
}

/// Impulse response of the reduced-CP reference and of the CP-OTFS operator
/// for the configured channel.
pub fn run_channel_response(cfg: &ExperimentConfig) -> Result<Vec<ResponseMap>> {
    let Some(resp) = cfg.response else { bail!("channel-response needs a response block") };
    let ch = draw_channel(&cfg.channel, &cfg.frame, cfg.seed, 0)?;
    let (k, l) = resp.impulse_at;
    if k >= cfg.frame.n() || l >= cfg.frame.m() {
        bail!("impulse cell ({k}, {l}) outside the grid");
    }
    let ops = [("rcp", rcp_reference(&ch, &cfg.frame)), ("cp-otfs", build_matrix(&ch, &cfg.frame))];
    Ok(ops
        .into_iter()
        .map(|(model, h)| {
            let rep = sparsity_metrics(&h, resp.threshold, resp.impulse_at);
            ResponseMap {
                model,
                n: cfg.frame.n(),
                m: cfg.frame.m(),
                tap_count: rep.tap_count,
                support: rep.support,
                magnitude: rep.response,
            }
        })
        .collect())
}
