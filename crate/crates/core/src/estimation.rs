//! Embedded-pilot channel estimation.
//!
//! A single pilot `x_p` at `(k_p, l_p)` is surrounded by a zero guard of
//! `l_max` delay columns either side and `2 * k_hat_max` Doppler rows either
//! side, where `k_hat_max = k_max + spread_margin` leaves room for the Doppler
//! leakage of every path. The received window right of the pilot holds one
//! row per delay bin; [`ml_estimate`] fits a single path per row against the
//! spreading model, [`threshold_estimate`] keeps every strong cell as a tap.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::channel::{ChannelSpec, PathSpec};
use crate::effective::{rcp_reference, spread_g, ChannelSource, EffectiveChannel, SpreadParams};
use crate::error::{config_err, Error, Result};
use crate::frame::{DdGrid, FrameConfig};

/// Doppler extent of the guard region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardRows {
    /// Rows `k_p - 2 k_hat_max ..= k_p + 2 k_hat_max`.
    Band { first: usize, last: usize },
    /// The band would cover the whole Doppler axis; every row is guarded.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotLayout {
    pub k_p: usize,
    pub l_p: usize,
    pub x_p: Complex64,
    pub k_max: usize,
    pub l_max: usize,
    pub k_hat_max: usize,
    guard: GuardRows,
}

impl PilotLayout {
    /// Validates the placement against the frame. The delay guard and the
    /// observation window may not wrap; the Doppler guard may not wrap unless
    /// it spans every row.
    pub fn new(
        cfg: &FrameConfig,
        k_p: usize,
        l_p: usize,
        x_p: Complex64,
        k_max: usize,
        l_max: usize,
        spread_margin: usize,
    ) -> Result<Self> {
        let (n, m) = (cfg.n(), cfg.m());
        let k_hat_max = k_max + spread_margin;
        if k_p >= n || l_p >= m {
            return config_err(format!("pilot ({k_p}, {l_p}) outside the {n}x{m} grid"));
        }
        if 2 * k_hat_max + 1 > n {
            return config_err(format!("observation window of {} Doppler bins exceeds N = {n}", 2 * k_hat_max + 1));
        }
        if l_p < l_max || l_p + l_max >= m {
            return config_err(format!(
                "delay guard [{}, {}] does not fit in 0..{m}",
                l_p as i64 - l_max as i64,
                l_p + l_max
            ));
        }
        let guard = if 4 * k_hat_max + 1 >= n {
            GuardRows::Full
        } else if k_p < 2 * k_hat_max || k_p + 2 * k_hat_max >= n {
            return config_err(format!(
                "Doppler guard [{}, {}] wraps around 0..{n}",
                k_p as i64 - 2 * k_hat_max as i64,
                k_p + 2 * k_hat_max
            ));
        } else {
            GuardRows::Band { first: k_p - 2 * k_hat_max, last: k_p + 2 * k_hat_max }
        };
        Ok(PilotLayout { k_p, l_p, x_p, k_max, l_max, k_hat_max, guard })
    }

    /// Pilot in the middle of the grid.
    pub fn centered(
        cfg: &FrameConfig,
        x_p: Complex64,
        k_max: usize,
        l_max: usize,
        spread_margin: usize,
    ) -> Result<Self> {
        Self::new(cfg, cfg.n() / 2, cfg.m() / 2, x_p, k_max, l_max, spread_margin)
    }

    pub fn guard_rows(&self) -> GuardRows {
        self.guard
    }

    /// Same placement with a different pilot value.
    pub fn with_pilot(&self, x_p: Complex64) -> Self {
        PilotLayout { x_p, ..self.clone() }
    }

    pub fn is_guard(&self, k: usize, l: usize) -> bool {
        let in_cols = l + self.l_max >= self.l_p && l <= self.l_p + self.l_max;
        let in_rows = match self.guard {
            GuardRows::Full => true,
            GuardRows::Band { first, last } => (first..=last).contains(&k),
        };
        in_cols && in_rows
    }

    /// Row-major mask of cells that carry data.
    pub fn data_mask(&self, cfg: &FrameConfig) -> Vec<bool> {
        let mut mask = Vec::with_capacity(cfg.cells());
        for k in 0..cfg.n() {
            for l in 0..cfg.m() {
                mask.push(!self.is_guard(k, l));
            }
        }
        mask
    }

    pub fn data_cells(&self, cfg: &FrameConfig) -> usize {
        self.data_mask(cfg).iter().filter(|&&d| d).count()
    }

    /// Frame holding only the pilot.
    pub fn pilot_frame(&self, cfg: &FrameConfig) -> DdGrid {
        let mut g = DdGrid::zeros(cfg.n(), cfg.m());
        g[(self.k_p, self.l_p)] = self.x_p;
        g
    }

    fn check(&self, cfg: &FrameConfig) -> Result<()> {
        let again =
            PilotLayout::new(cfg, self.k_p, self.l_p, self.x_p, self.k_max, self.l_max, self.k_hat_max - self.k_max)?;
        if again.guard != self.guard {
            return config_err("pilot layout was built for a different frame");
        }
        Ok(())
    }
}

/// Received window next to the pilot: `(l_max + 1)` delay rows by
/// `(2 k_hat_max + 1)` Doppler columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Complex64>,
}

impl PilotObservation {
    /// Entry for delay bin `l` and window column `c` (Doppler offset `c - k_hat_max`).
    pub fn get(&self, l: usize, c: usize) -> Complex64 {
        self.values[l * self.cols + c]
    }

    pub fn row(&self, l: usize) -> &[Complex64] {
        &self.values[l * self.cols..(l + 1) * self.cols]
    }
}

/// Writes the pilot and guard into a data frame.
pub fn embed_pilot(data: &DdGrid, layout: &PilotLayout, cfg: &FrameConfig) -> Result<DdGrid> {
    cfg.check_grid(data)?;
    layout.check(cfg)?;
    let mut out = data.clone();
    for k in 0..cfg.n() {
        for l in 0..cfg.m() {
            if layout.is_guard(k, l) {
                out[(k, l)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    out[(layout.k_p, layout.l_p)] = layout.x_p;
    Ok(out)
}

/// `y_ch[l][c] = Y[[k_p + c - k_hat_max]_N, l_p + l]`.
pub fn extract_observation(y: &DdGrid, layout: &PilotLayout, cfg: &FrameConfig) -> Result<PilotObservation> {
    cfg.check_grid(y)?;
    let rows = layout.l_max + 1;
    let cols = 2 * layout.k_hat_max + 1;
    let n = cfg.n() as i64;
    let mut values = Vec::with_capacity(rows * cols);
    for l in 0..rows {
        for c in 0..cols {
            let k = (layout.k_p as i64 + c as i64 - layout.k_hat_max as i64).rem_euclid(n) as usize;
            values.push(y[(k, (layout.l_p + l) % cfg.m())]);
        }
    }
    Ok(PilotObservation { rows, cols, values })
}

/// Noise-free pilot response shape of a unit-gain path with Doppler
/// `k_cand`: column `c` is `exp(j2pi l_p k_cand / NM) G(k_cand + k_hat_max - c, k_cand)`.
pub fn psi_vector(k_cand: i64, layout: &PilotLayout, cfg: &FrameConfig) -> Result<Vec<Complex64>> {
    if k_cand.unsigned_abs() as usize > layout.k_max {
        return Err(Error::Range(format!("Doppler candidate {k_cand} outside +/-{}", layout.k_max)));
    }
    let params = SpreadParams::from(cfg);
    let phase = Complex64::from_polar(1.0, 2.0 * PI * layout.l_p as f64 * k_cand as f64 / cfg.cells() as f64);
    let kh = layout.k_hat_max as i64;
    Ok((0..2 * kh + 1).map(|c| phase * spread_g(k_cand + kh - c, k_cand, &params)).collect())
}

/// Candidates `0, -1, 1, -2, 2, ...` so strict-max ties keep the lowest |k|.
fn doppler_candidates(k_max: usize) -> impl Iterator<Item = i64> {
    std::iter::once(0).chain((1..=k_max as i64).flat_map(|k| [-k, k]))
}

/// Per-delay-bin maximum-likelihood estimate assuming at most one path per
/// bin. For every candidate Doppler the best gain is the projection of the
/// observed row onto `psi * x_p`; the candidate with the largest projected
/// energy wins and the path is kept when `|gain| >= threshold`.
pub fn ml_estimate(
    obs: &PilotObservation,
    layout: &PilotLayout,
    cfg: &FrameConfig,
    threshold: f64,
) -> Result<ChannelSpec> {
    let psis: Vec<(i64, Vec<Complex64>, f64)> = doppler_candidates(layout.k_max)
        .map(|k| {
            let psi = psi_vector(k, layout, cfg)?;
            let energy = psi.iter().map(|v| v.norm_sqr()).sum::<f64>();
            Ok((k, psi, energy))
        })
        .collect::<Result<_>>()?;
    let pilot_energy = layout.x_p.norm_sqr();
    let mut paths = Vec::new();
    for l in 0..obs.rows {
        let row = obs.row(l);
        let mut best: Option<(i64, Complex64, f64)> = None;
        for (k, psi, energy) in &psis {
            if *energy == 0.0 {
                continue;
            }
            // psi^H y
            let corr: Complex64 = psi.iter().zip(row).map(|(p, y)| p.conj() * y).sum();
            let score = corr.norm_sqr() / energy;
            if best.is_none_or(|b| score > b.2) {
                best = Some((*k, corr, score));
            }
        }
        if let Some((k, corr, _)) = best {
            let energy = psis.iter().find(|p| p.0 == k).map(|p| p.2).unwrap_or(1.0);
            let gain = layout.x_p.conj() * corr / (energy * pilot_energy);
            if gain.norm() >= threshold {
                paths.push(PathSpec::new(gain, l, k));
            }
        }
    }
    Ok(ChannelSpec::new(paths))
}

/// Observation cells with `|y| >= threshold`, each read as an unspread path
/// with delay `l`, Doppler offset `c - k_hat_max` and a gain chosen so the
/// single-tap model reproduces `y / x_p` at the pilot.
pub fn threshold_paths(obs: &PilotObservation, layout: &PilotLayout, cfg: &FrameConfig, threshold: f64) -> ChannelSpec {
    let nm = cfg.cells() as f64;
    let mut paths = Vec::new();
    for l in 0..obs.rows {
        for c in 0..obs.cols {
            let y = obs.get(l, c);
            if y.norm() >= threshold && y.norm() > 0.0 {
                let d = c as i64 - layout.k_hat_max as i64;
                let derotate = Complex64::from_polar(1.0, -2.0 * PI * layout.l_p as f64 * d as f64 / nm);
                paths.push(PathSpec::new(y / layout.x_p * derotate, l, d));
            }
        }
    }
    ChannelSpec::new(paths)
}

/// Threshold-detection baseline: every detected cell becomes a single-tap
/// term replicated over all output cells.
pub fn threshold_estimate(
    obs: &PilotObservation,
    layout: &PilotLayout,
    cfg: &FrameConfig,
    threshold: f64,
) -> EffectiveChannel {
    let mut h = rcp_reference(&threshold_paths(obs, layout, cfg, threshold), cfg);
    h.source = ChannelSource::Estimated;
    h
}
