//! Effective delay-Doppler channel of CP-OTFS with unequal cyclic prefixes.
//!
//! Every OFDM symbol carries its own prefix, so a path with Doppler index
//! `k_i` keeps rotating during the prefixes it does not see in the DD grid.
//! That rotation leaks the path over neighbouring Doppler bins with weights
//! `G(q, k_i)`; the received DD symbol is
//!
//! ```text
//! Y[k,l] = sum_i h_i exp(j2pi (l - l_i) k_i / NM)
//!              sum_{q=-N_hat/2}^{N_hat/2-1} G(q, k_i) X[[k - k_i + q]_N, [l - l_i]_M]
//! ```
//!
//! With `N_hat = N` this is exact for on-grid paths whose delays are covered
//! by the regular prefix.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSpec;
use crate::error::Result;
use crate::frame::{DdGrid, FrameConfig};

/// Arguments of `|theta| mod 2pi` below this are treated as resonant.
pub const RESONANCE_EPS: f64 = 1e-9;

/// Parameters the spreading functions depend on. Unlike [`FrameConfig`] the
/// normalized CP lengths are free reals here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadParams {
    pub n: usize,
    pub s: usize,
    pub psi_reg: f64,
    pub psi_ext: f64,
}

impl SpreadParams {
    pub fn new(n: usize, s: usize, psi_reg: f64, psi_ext: f64) -> Self {
        assert!(n > 0 && s > 0 && n.is_multiple_of(s), "N must be a positive multiple of S");
        SpreadParams { n, s, psi_reg, psi_ext }
    }

    /// Same parameters as if every prefix had the regular length.
    pub fn equal_cp(self) -> Self {
        SpreadParams { psi_ext: 0.0, ..self }
    }
}

impl From<&FrameConfig> for SpreadParams {
    fn from(cfg: &FrameConfig) -> Self {
        SpreadParams::new(cfg.n(), cfg.s(), cfg.psi_reg(), cfg.psi_ext())
    }
}

/// Kronecker delta on `Z_N`.
fn delta(q: i64, n: usize) -> Complex64 {
    if q.rem_euclid(n as i64) == 0 {
        Complex64::new(1.0, 0.0)
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// `sum_{t=0}^{count-1} exp(j theta t)`, i.e. `(exp(j count theta) - 1) / (exp(j theta) - 1)`,
/// evaluated in Dirichlet form; the resonant 0/0 case returns `count`.
fn geometric(theta: f64, count: usize) -> Complex64 {
    let reduced = theta - 2.0 * PI * (theta / (2.0 * PI)).round();
    if reduced.abs() < RESONANCE_EPS {
        return Complex64::new(count as f64, 0.0);
    }
    let c = count as f64;
    let ratio = (c * reduced / 2.0).sin() / (reduced / 2.0).sin();
    Complex64::from_polar(ratio, (c - 1.0) * reduced / 2.0)
}

/// Doppler spreading function for unequal prefixes (closed form).
pub fn spread_g(q: i64, k_i: i64, p: &SpreadParams) -> Complex64 {
    if k_i == 0 {
        return delta(q, p.n);
    }
    let (n, s) = (p.n as f64, p.s as f64);
    let k = k_i as f64;
    let windowed = -(q as f64) - k * (p.psi_reg + p.psi_ext / s);
    let within = -(q as f64) - k * p.psi_reg;
    let across_windows = geometric(-2.0 * PI * s * windowed / n, p.n / p.s);
    let inside_window = geometric(-2.0 * PI * within / n, p.s);
    across_windows * inside_window / n
}

/// Direct `N`-term sum the closed form is derived from:
/// `(1/N) sum_n exp(-j(2pi/N)(-n q - k_i (n psi_reg + floor(n/S) psi_ext)))`.
pub fn spread_g_oracle(q: i64, k_i: i64, p: &SpreadParams) -> Complex64 {
    let n = p.n as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for idx in 0..p.n {
        let cp_phase = idx as f64 * p.psi_reg + (idx / p.s) as f64 * p.psi_ext;
        let arg = -(2.0 * PI / n) * (-(idx as f64) * q as f64 - k_i as f64 * cp_phase);
        acc += Complex64::from_polar(1.0, arg);
    }
    acc / n
}

/// Spreading function when every prefix has the regular length.
pub fn spread_g_equal_cp(q: i64, k_i: i64, p: &SpreadParams) -> Complex64 {
    if k_i == 0 {
        return delta(q, p.n);
    }
    let x = q as f64 + k_i as f64 * p.psi_reg;
    geometric(2.0 * PI * x / p.n as f64, p.n) / p.n as f64
}

/// Doppler offsets `q` kept by a truncation window of `n_hat` taps.
pub fn q_window(n_hat: usize) -> std::ops::Range<i64> {
    let half = (n_hat / 2) as i64;
    -half..half
}

fn wrap(v: i64, n: usize) -> usize {
    v.rem_euclid(n as i64) as usize
}

/// Predicted received DD grid, evaluated directly from the path list.
pub fn predict_ydd(x: &DdGrid, ch: &ChannelSpec, cfg: &FrameConfig) -> Result<DdGrid> {
    cfg.check_grid(x)?;
    let (n, m) = (cfg.n(), cfg.m());
    let params = SpreadParams::from(cfg);
    let nm = (n * m) as f64;
    let mut y = DdGrid::zeros(n, m);
    for path in &ch.paths {
        let taps: Vec<(i64, Complex64)> = q_window(cfg.n_hat())
            .map(|q| (q, spread_g(q, path.doppler_idx, &params)))
            .filter(|(_, g)| *g != Complex64::new(0.0, 0.0))
            .collect();
        for l in 0..m {
            let phase = 2.0 * PI * (l as f64 - path.delay_idx as f64) * path.doppler_idx as f64 / nm;
            let coeff = path.gain * Complex64::from_polar(1.0, phase);
            let l_in = wrap(l as i64 - path.delay_idx as i64, m);
            for k in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for &(q, g) in &taps {
                    acc += g * x[(wrap(k as i64 - path.doppler_idx + q, n), l_in)];
                }
                y[(k, l)] += coeff * acc;
            }
        }
    }
    Ok(y)
}

/// Which model an [`EffectiveChannel`] was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelSource {
    UnequalCp,
    EqualCp,
    RcpReference,
    Estimated,
}

/// One coefficient of the sparse DD operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub out_k: usize,
    pub out_l: usize,
    pub in_k: usize,
    pub in_l: usize,
    pub coeff: Complex64,
}

/// Sparse operator `vec(Y) = H vec(X)` on an `N x M` DD grid. Taps are sorted
/// by output cell, then input cell, with at most one tap per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveChannel {
    pub n: usize,
    pub m: usize,
    pub source: ChannelSource,
    pub taps: Vec<Tap>,
}

impl EffectiveChannel {
    /// Builds from raw (possibly duplicated) taps, summing coefficients that
    /// share an `(out, in)` pair.
    pub fn from_raw_taps(n: usize, m: usize, source: ChannelSource, mut raw: Vec<Tap>) -> Self {
        let key = |t: &Tap| (t.out_k * m + t.out_l, t.in_k * m + t.in_l);
        raw.sort_by_key(key);
        let mut taps: Vec<Tap> = Vec::with_capacity(raw.len());
        for t in raw {
            match taps.last_mut() {
                Some(last) if key(last) == key(&t) => last.coeff += t.coeff,
                _ => taps.push(t),
            }
        }
        EffectiveChannel { n, m, source, taps }
    }

    pub fn tap_count(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Matrix-vector product on a grid.
    pub fn apply(&self, x: &DdGrid) -> DdGrid {
        assert_eq!((x.rows(), x.cols()), (self.n, self.m), "grid/operator size mismatch");
        let mut y = DdGrid::zeros(self.n, self.m);
        for t in &self.taps {
            y[(t.out_k, t.out_l)] += t.coeff * x[(t.in_k, t.in_l)];
        }
        y
    }

    /// Response grid to a unit impulse at input cell `(k, l)`.
    pub fn impulse_response(&self, k: usize, l: usize) -> DdGrid {
        let mut r = DdGrid::zeros(self.n, self.m);
        for t in self.taps.iter().filter(|t| t.in_k == k && t.in_l == l) {
            r[(t.out_k, t.out_l)] += t.coeff;
        }
        r
    }

    /// CSV rows `out_k,out_l,in_k,in_l,re,im` with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "out_k,out_l,in_k,in_l,re,im")?;
        for t in &self.taps {
            writeln!(w, "{},{},{},{},{:e},{:e}", t.out_k, t.out_l, t.in_k, t.in_l, t.coeff.re, t.coeff.im)?;
        }
        Ok(())
    }
}

/// Per-path single-tap entries, shared by the CP-OTFS builders and the RCP
/// reference. `weights(k_i)` lists `(q, G(q, k_i))` for the path.
fn build_with(
    ch: &ChannelSpec,
    cfg: &FrameConfig,
    source: ChannelSource,
    weights: impl Fn(i64) -> Vec<(i64, Complex64)>,
) -> EffectiveChannel {
    let (n, m) = (cfg.n(), cfg.m());
    let nm = (n * m) as f64;
    let mut raw = Vec::new();
    for path in &ch.paths {
        let w = weights(path.doppler_idx);
        for l in 0..m {
            let phase = 2.0 * PI * (l as f64 - path.delay_idx as f64) * path.doppler_idx as f64 / nm;
            let coeff = path.gain * Complex64::from_polar(1.0, phase);
            let in_l = wrap(l as i64 - path.delay_idx as i64, m);
            for k in 0..n {
                for &(q, g) in &w {
                    raw.push(Tap {
                        out_k: k,
                        out_l: l,
                        in_k: wrap(k as i64 - path.doppler_idx + q, n),
                        in_l,
                        coeff: coeff * g,
                    });
                }
            }
        }
    }
    EffectiveChannel::from_raw_taps(n, m, source, raw)
}

fn window_weights(n_hat: usize, g: impl Fn(i64) -> Complex64) -> Vec<(i64, Complex64)> {
    q_window(n_hat).map(|q| (q, g(q))).filter(|(_, v)| *v != Complex64::new(0.0, 0.0)).collect()
}

/// Sparse operator of the unequal-prefix IOR with the frame's `N_hat` window.
pub fn build_matrix(ch: &ChannelSpec, cfg: &FrameConfig) -> EffectiveChannel {
    let p = SpreadParams::from(cfg);
    build_with(ch, cfg, ChannelSource::UnequalCp, |k| window_weights(cfg.n_hat(), |q| spread_g(q, k, &p)))
}

/// Sparse operator that assumes every prefix has the regular length.
pub fn build_matrix_equal_cp(ch: &ChannelSpec, cfg: &FrameConfig) -> EffectiveChannel {
    let p = SpreadParams::from(cfg);
    build_with(ch, cfg, ChannelSource::EqualCp, |k| window_weights(cfg.n_hat(), |q| spread_g_equal_cp(q, k, &p)))
}

/// Single-tap reference operator of reduced-CP OTFS (one prefix per frame).
pub fn rcp_reference(ch: &ChannelSpec, cfg: &FrameConfig) -> EffectiveChannel {
    build_with(ch, cfg, ChannelSource::RcpReference, |_| vec![(0, Complex64::new(1.0, 0.0))])
}

/// Sparsity summary of an operator and its normalized response to one impulse.
#[derive(Debug, Clone)]
pub struct SparsityReport {
    pub tap_count: usize,
    /// Taps with `|coeff| >= threshold * max |coeff|`.
    pub taps_above_threshold: usize,
    /// `|response| / max |response|`, `N x M` row-major.
    pub response: Vec<f64>,
    /// Cells of `response` at or above `threshold`.
    pub support: usize,
}

pub fn sparsity_metrics(h: &EffectiveChannel, threshold: f64, impulse_at: (usize, usize)) -> SparsityReport {
    let peak_tap = h.taps.iter().map(|t| t.coeff.norm()).fold(0.0, f64::max);
    let taps_above_threshold =
        if peak_tap > 0.0 { h.taps.iter().filter(|t| t.coeff.norm() >= threshold * peak_tap).count() } else { 0 };
    let r = h.impulse_response(impulse_at.0, impulse_at.1);
    let mags: Vec<f64> = r.as_slice().iter().map(|v| v.norm()).collect();
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    let response: Vec<f64> = if peak > 0.0 { mags.iter().map(|v| v / peak).collect() } else { mags };
    let support = if peak > 0.0 { response.iter().filter(|&&v| v >= threshold).count() } else { 0 };
    SparsityReport { tap_count: h.tap_count(), taps_above_threshold, response, support }
}
