//! Frame numerology, delay-Doppler / time-frequency grids and the symplectic
//! finite Fourier transforms between them.
//!
//! Grids are stored row-major. A [`DdGrid`] is indexed `[(k, l)]` with Doppler
//! index `k` in `0..N` and delay index `l` in `0..M`; a [`TfGrid`] is indexed
//! `[(n, m)]` with OFDM symbol `n` in `0..N` and subcarrier `m` in `0..M`.

use std::fmt;
use std::marker::PhantomData;
use std::ops::{Index, IndexMut};
use std::path::Path;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Largest distance (in samples) a configured CP duration may sit from an
/// integer sample count before it is rejected.
pub const CP_SNAP_TOLERANCE: f64 = 0.05;

/// Static frame and numerology parameters.
///
/// CP durations are held as integer sample counts at the critical sample
/// period `Ts = 1 / (M * delta_f)`; the duration accessors convert back to
/// seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FrameConfigFile", into = "FrameConfigFile")]
pub struct FrameConfig {
    m: usize,
    n: usize,
    delta_f: f64,
    s: usize,
    cp_reg: usize,
    cp_long: usize,
    n_hat: usize,
}

impl FrameConfig {
    /// Builds a configuration from durations in seconds. CP durations must be
    /// within [`CP_SNAP_TOLERANCE`] samples of an integer sample count.
    pub fn new(
        m: usize,
        n: usize,
        delta_f: f64,
        s: usize,
        t_cp_reg: f64,
        t_cp_long: f64,
        n_hat: usize,
    ) -> Result<Self> {
        if !(delta_f.is_finite() && delta_f > 0.0) {
            return config_err(format!("subcarrier spacing must be positive, got {delta_f}"));
        }
        if m == 0 {
            return config_err("M must be positive");
        }
        let ts = 1.0 / (m as f64 * delta_f);
        let cp_reg = snap_samples("T_cp_reg", t_cp_reg, ts)?;
        let cp_long = snap_samples("T_cp_long", t_cp_long, ts)?;
        Self::from_samples(m, n, delta_f, s, cp_reg, cp_long, n_hat)
    }

    /// Builds a configuration with CP lengths given directly in samples.
    pub fn from_samples(
        m: usize,
        n: usize,
        delta_f: f64,
        s: usize,
        cp_reg: usize,
        cp_long: usize,
        n_hat: usize,
    ) -> Result<Self> {
        let cfg = FrameConfig { m, n, delta_f, s, cp_reg, cp_long, n_hat };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.s == 0 {
            return config_err("M, N and S must be positive");
        }
        if !(self.delta_f.is_finite() && self.delta_f > 0.0) {
            return config_err("subcarrier spacing must be positive");
        }
        if !self.n.is_multiple_of(self.s) {
            return config_err(format!("N = {} is not a multiple of S = {}", self.n, self.s));
        }
        if self.cp_long < self.cp_reg {
            return config_err(format!(
                "long CP ({} samples) shorter than regular CP ({} samples)",
                self.cp_long, self.cp_reg
            ));
        }
        if self.cp_long > self.m {
            return config_err("CP longer than the OFDM symbol body");
        }
        if self.n_hat == 0 || self.n_hat > self.n || !self.n_hat.is_multiple_of(2) {
            return config_err(format!("N_hat = {} must be even and within (0, N = {}]", self.n_hat, self.n));
        }
        Ok(())
    }

    /// Loads a configuration from a JSON file (durations in microseconds).
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Same frame with the long CP set to `ratio` times the regular CP,
    /// rounded to the nearest sample.
    pub fn with_cp_ratio(&self, ratio: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio >= 1.0) {
            return config_err(format!("CP ratio must be >= 1, got {ratio}"));
        }
        let cp_long = (ratio * self.cp_reg as f64).round() as usize;
        Self::from_samples(self.m, self.n, self.delta_f, self.s, self.cp_reg, cp_long, self.n_hat)
    }

    /// Same frame with a different Doppler truncation window.
    pub fn with_n_hat(&self, n_hat: usize) -> Result<Self> {
        Self::from_samples(self.m, self.n, self.delta_f, self.s, self.cp_reg, self.cp_long, n_hat)
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn s(&self) -> usize {
        self.s
    }
    pub fn delta_f(&self) -> f64 {
        self.delta_f
    }
    pub fn n_hat(&self) -> usize {
        self.n_hat
    }
    /// Number of grid cells `M * N`.
    pub fn cells(&self) -> usize {
        self.m * self.n
    }

    /// OFDM symbol body duration `T = 1 / delta_f`.
    pub fn symbol_period(&self) -> f64 {
        1.0 / self.delta_f
    }
    /// Sample period `Ts = T / M`.
    pub fn sample_period(&self) -> f64 {
        self.symbol_period() / self.m as f64
    }
    pub fn t_cp_reg(&self) -> f64 {
        self.cp_reg as f64 * self.sample_period()
    }
    pub fn t_cp_long(&self) -> f64 {
        self.cp_long as f64 * self.sample_period()
    }
    pub fn cp_reg_samples(&self) -> usize {
        self.cp_reg
    }
    pub fn cp_long_samples(&self) -> usize {
        self.cp_long
    }
    /// Regular CP normalized by the symbol body, `T_cp_reg / T`.
    pub fn psi_reg(&self) -> f64 {
        self.cp_reg as f64 / self.m as f64
    }
    /// Excess of the long CP normalized by the symbol body, `(T_cp_long - T_cp_reg) / T`.
    pub fn psi_ext(&self) -> f64 {
        (self.cp_long - self.cp_reg) as f64 / self.m as f64
    }
    /// `T_cp_long / T_cp_reg` as realized in samples.
    pub fn cp_ratio(&self) -> f64 {
        if self.cp_reg == 0 {
            1.0
        } else {
            self.cp_long as f64 / self.cp_reg as f64
        }
    }

    /// CP sample count of OFDM symbol `n`: long for the first symbol of every
    /// window of `S` symbols, regular otherwise.
    pub fn cp_samples(&self, n: usize) -> usize {
        if n.is_multiple_of(self.s) {
            self.cp_long
        } else {
            self.cp_reg
        }
    }

    /// Total length of a modulated frame in samples.
    pub fn stream_len(&self) -> usize {
        let windows = self.n / self.s;
        self.n * self.m + windows * self.cp_long + (self.n - windows) * self.cp_reg
    }

    pub(crate) fn check_grid<D>(&self, g: &Grid<D>) -> Result<()> {
        if g.rows() != self.n || g.cols() != self.m {
            return config_err(format!("grid is {}x{}, frame expects {}x{}", g.rows(), g.cols(), self.n, self.m));
        }
        Ok(())
    }
}

fn snap_samples(name: &str, duration: f64, ts: f64) -> Result<usize> {
    if !(duration.is_finite() && duration >= 0.0) {
        return config_err(format!("{name} must be a non-negative duration"));
    }
    let exact = duration / ts;
    let rounded = exact.round();
    if (exact - rounded).abs() > CP_SNAP_TOLERANCE {
        return config_err(format!(
            "{name} = {:.6} us is {exact:.4} samples; not an integer multiple of Ts = {:.6} us",
            duration * 1e6,
            ts * 1e6
        ));
    }
    Ok(rounded as usize)
}

/// On-disk layout of [`FrameConfig`]; durations are in microseconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameConfigFile {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    delta_f: f64,
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "T_cp_reg")]
    t_cp_reg_us: f64,
    #[serde(rename = "T_cp_long")]
    t_cp_long_us: f64,
    #[serde(rename = "N_hat")]
    n_hat: usize,
}

impl TryFrom<FrameConfigFile> for FrameConfig {
    type Error = Error;

    fn try_from(f: FrameConfigFile) -> Result<Self> {
        FrameConfig::new(f.m, f.n, f.delta_f, f.s, f.t_cp_reg_us * 1e-6, f.t_cp_long_us * 1e-6, f.n_hat)
    }
}

impl From<FrameConfig> for FrameConfigFile {
    fn from(c: FrameConfig) -> Self {
        FrameConfigFile {
            m: c.m,
            n: c.n,
            delta_f: c.delta_f,
            s: c.s,
            t_cp_reg_us: c.t_cp_reg() * 1e6,
            t_cp_long_us: c.t_cp_long() * 1e6,
            n_hat: c.n_hat,
        }
    }
}

/// Marker for delay-Doppler grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd;
/// Marker for time-frequency grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tf;

/// Dense row-major complex grid tagged with its domain.
#[derive(Clone, PartialEq)]
pub struct Grid<D> {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
    _domain: PhantomData<D>,
}

pub type DdGrid = Grid<Dd>;
pub type TfGrid = Grid<Tf>;

impl<D> Grid<D> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec(rows, cols, vec![Complex64::new(0.0, 0.0); rows * cols])
    }

    /// Wraps a row-major buffer. Panics if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols, "grid buffer length mismatch");
        Grid { rows, cols, data, _domain: PhantomData }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::from_vec(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }
    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }
    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Largest element-wise absolute difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// `||self - other||_F / ||other||_F` (absolute error when `other` is zero).
    pub fn rel_frobenius_err(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let num: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den = other.energy();
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}

impl<D> Index<(usize, usize)> for Grid<D> {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        assert!(r < self.rows && c < self.cols, "grid index out of range");
        &self.data[r * self.cols + c]
    }
}

impl<D> IndexMut<(usize, usize)> for Grid<D> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        assert!(r < self.rows && c < self.cols, "grid index out of range");
        &mut self.data[r * self.cols + c]
    }
}

impl<D> fmt::Debug for Grid<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("energy", &self.energy())
            .finish()
    }
}

/// In-place unnormalized DFT of every row.
pub(crate) fn dft_rows(data: &mut [Complex64], rows: usize, cols: usize, dir: FftDirection) {
    let fft = FftPlanner::new().plan_fft(cols, dir);
    debug_assert_eq!(data.len(), rows * cols);
    fft.process(data);
}

/// In-place unnormalized DFT of every column.
pub(crate) fn dft_cols(data: &mut [Complex64], rows: usize, cols: usize, dir: FftDirection) {
    let fft = FftPlanner::new().plan_fft(rows, dir);
    let mut col = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = data[r * cols + c];
        }
        fft.process(&mut col);
        for r in 0..rows {
            data[r * cols + c] = col[r];
        }
    }
}

/// Inverse symplectic finite Fourier transform, DD -> TF:
/// `X_TF[n,m] = 1/sqrt(MN) sum_k sum_l X_DD[k,l] exp(j2pi(nk/N - ml/M))`.
pub fn isfft(x: &DdGrid, cfg: &FrameConfig) -> Result<TfGrid> {
    cfg.check_grid(x)?;
    let (n, m) = (cfg.n(), cfg.m());
    let mut data = x.as_slice().to_vec();
    // delay axis: exp(-j2pi ml/M) is a forward DFT
    dft_rows(&mut data, n, m, FftDirection::Forward);
    // Doppler axis: exp(+j2pi nk/N) is an inverse DFT
    dft_cols(&mut data, n, m, FftDirection::Inverse);
    let norm = 1.0 / ((m * n) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= norm);
    Ok(TfGrid::from_vec(n, m, data))
}

/// Symplectic finite Fourier transform, TF -> DD; exact inverse of [`isfft`].
pub fn sfft(y: &TfGrid, cfg: &FrameConfig) -> Result<DdGrid> {
    cfg.check_grid(y)?;
    let (n, m) = (cfg.n(), cfg.m());
    let mut data = y.as_slice().to_vec();
    dft_rows(&mut data, n, m, FftDirection::Inverse);
    dft_cols(&mut data, n, m, FftDirection::Forward);
    let norm = 1.0 / ((m * n) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= norm);
    Ok(DdGrid::from_vec(n, m, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, m: usize) -> FrameConfig {
        FrameConfig::from_samples(m, n, 15e3, 2, 1, 1, 2).unwrap()
    }

    /// Direct double sum, kept independent of the FFT path.
    fn isfft_naive(x: &DdGrid) -> TfGrid {
        let (n, m) = (x.rows(), x.cols());
        let norm = 1.0 / ((m * n) as f64).sqrt();
        TfGrid::from_fn(n, m, |nn, mm| {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                for l in 0..m {
                    let ph = 2.0 * std::f64::consts::PI * ((nn * k) as f64 / n as f64 - (mm * l) as f64 / m as f64);
                    acc += x[(k, l)] * Complex64::from_polar(1.0, ph);
                }
            }
            acc * norm
        })
    }

    fn pseudo_random_grid<D>(n: usize, m: usize, seed: u64) -> Grid<D> {
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        Grid::from_fn(n, m, |_, _| Complex64::new(next(), next()))
    }

    #[test]
    fn impulse_maps_to_flat_tf_grid() {
        let c = cfg(8, 4);
        let mut x = DdGrid::zeros(8, 4);
        x[(0, 0)] = Complex64::new(1.0, 0.0);
        let tf = isfft(&x, &c).unwrap();
        let expect = 1.0 / 32f64.sqrt();
        for v in tf.as_slice() {
            assert!((v - Complex64::new(expect, 0.0)).norm() < 1e-15);
        }
        let back = sfft(&tf, &c).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn zeros_stay_zero() {
        let c = cfg(4, 8);
        assert_eq!(isfft(&DdGrid::zeros(4, 8), &c).unwrap().energy(), 0.0);
        assert_eq!(sfft(&TfGrid::zeros(4, 8), &c).unwrap().energy(), 0.0);
    }

    #[test]
    fn fast_transform_matches_double_sum() {
        for &(n, m) in &[(8, 8), (4, 16), (16, 16), (6, 10)] {
            let c = FrameConfig::from_samples(m, n, 15e3, 2, 1, 1, 2).unwrap();
            let x: DdGrid = pseudo_random_grid(n, m, (n * 31 + m) as u64);
            let fast = isfft(&x, &c).unwrap();
            assert!(fast.max_abs_diff(&isfft_naive(&x)) < 1e-12, "{n}x{m}");
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let c = cfg(8, 8);
        let x: DdGrid = pseudo_random_grid(8, 8, 7);
        let tf = isfft(&x, &c).unwrap();
        assert!(((tf.energy() - x.energy()) / x.energy()).abs() < 1e-10);
        assert!(sfft(&tf, &c).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let c = cfg(8, 8);
        assert!(matches!(isfft(&DdGrid::zeros(8, 4), &c), Err(Error::Config(_))));
        assert!(matches!(sfft(&TfGrid::zeros(4, 8), &c), Err(Error::Config(_))));
    }

    #[test]
    fn cp_schedule_and_stream_length() {
        let c = FrameConfig::from_samples(128, 128, 15e3, 8, 5, 6, 20).unwrap();
        assert_eq!(c.cp_samples(0), 6);
        assert_eq!(c.cp_samples(8), 6);
        assert_eq!(c.cp_samples(1), 5);
        assert_eq!(c.stream_len(), 128 * 128 + 16 * 6 + 112 * 5);
        assert!((c.psi_reg() - 5.0 / 128.0).abs() < 1e-15);
        assert!((c.psi_ext() - 1.0 / 128.0).abs() < 1e-15);
    }

    #[test]
    fn json_durations_snap_to_samples() {
        // 2.60 us at M=128, 15 kHz is 4.992 samples -> 5
        let text = r#"{"M":128,"N":128,"delta_f":15000.0,"S":8,"T_cp_reg":2.60,"T_cp_long":3.125,"N_hat":20}"#;
        let c: FrameConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.cp_reg_samples(), 5);
        assert_eq!(c.cp_long_samples(), 6);
        let again: FrameConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        // 3 us = 5.76 samples
        assert!(FrameConfig::new(128, 128, 15e3, 8, 3.0e-6, 3.0e-6, 20).is_err());
        // N not a multiple of S
        assert!(FrameConfig::from_samples(16, 12, 15e3, 8, 1, 1, 4).is_err());
        // long CP shorter than regular
        assert!(FrameConfig::from_samples(16, 16, 15e3, 4, 3, 2, 4).is_err());
        // N_hat bounds
        assert!(FrameConfig::from_samples(16, 16, 15e3, 4, 1, 1, 0).is_err());
        assert!(FrameConfig::from_samples(16, 16, 15e3, 4, 1, 1, 18).is_err());
    }

    #[test]
    fn cp_ratio_rounds_to_samples() {
        let c = FrameConfig::from_samples(128, 128, 15e3, 8, 5, 5, 20).unwrap();
        assert_eq!(c.with_cp_ratio(1.2).unwrap().cp_long_samples(), 6);
        assert_eq!(c.with_cp_ratio(1.8).unwrap().cp_long_samples(), 9);
        assert_eq!(c.with_cp_ratio(1.0).unwrap().psi_ext(), 0.0);
    }
}
