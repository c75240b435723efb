//! Discrete-time CP-OTFS transmitter and receiver front end at the critical
//! sample rate `M * delta_f`.
//!
//! Each OFDM symbol is an `M`-point inverse DFT of one TF row, preceded by a
//! cyclic prefix of [`FrameConfig::cp_samples`] samples. The receiver strips
//! the prefixes and takes an `M`-point DFT scaled by `1/M`, so an ideal
//! channel returns the transmitted TF grid unchanged.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftDirection;

use crate::error::{Error, Result};
use crate::frame::{dft_rows, FrameConfig, TfGrid};

/// Time-domain baseband samples of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStream {
    pub samples: Vec<Complex64>,
}

impl SampleStream {
    pub fn new(samples: Vec<Complex64>) -> Self {
        SampleStream { samples }
    }

    pub fn zeros(len: usize) -> Self {
        SampleStream { samples: vec![Complex64::new(0.0, 0.0); len] }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Little-endian interleaved `f64` I/Q.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.samples.len() * 16);
        for s in &self.samples {
            out.extend_from_slice(&s.re.to_le_bytes());
            out.extend_from_slice(&s.im.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(16) {
            return Err(Error::Framing { expected: bytes.len() / 16 * 16 + 16, got: bytes.len() });
        }
        let samples = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        Ok(SampleStream { samples })
    }

    pub fn write_iq(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_le_bytes())?;
        Ok(())
    }

    pub fn read_iq(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_le_bytes(&bytes)
    }
}

/// CP duration in seconds of OFDM symbol `n`.
pub fn cp_duration(n: usize, cfg: &FrameConfig) -> Result<f64> {
    if n >= cfg.n() {
        return Err(Error::Index { index: n, limit: cfg.n() });
    }
    Ok(cfg.cp_samples(n) as f64 * cfg.sample_period())
}

/// Offset of the first body sample of symbol `n` within the stream.
pub fn body_offset(n: usize, cfg: &FrameConfig) -> usize {
    (0..n).map(|i| cfg.cp_samples(i) + cfg.m()).sum::<usize>() + cfg.cp_samples(n)
}

/// OFDM modulation with the unequal-CP schedule.
pub fn modulate(x_tf: &TfGrid, cfg: &FrameConfig) -> Result<SampleStream> {
    cfg.check_grid(x_tf)?;
    let (n, m) = (cfg.n(), cfg.m());
    let mut bodies = x_tf.as_slice().to_vec();
    // sample s of symbol n = sum_m X[n,m] exp(+j2pi ms/M), no scaling
    dft_rows(&mut bodies, n, m, FftDirection::Inverse);

    let mut out = Vec::with_capacity(cfg.stream_len());
    for (sym, body) in bodies.chunks_exact(m).enumerate() {
        let cp = cfg.cp_samples(sym);
        out.extend_from_slice(&body[m - cp..]);
        out.extend_from_slice(body);
    }
    debug_assert_eq!(out.len(), cfg.stream_len());
    Ok(SampleStream::new(out))
}

/// CP removal and per-symbol DFT, `Y[n,m] = (1/M) sum_s y_n[s] exp(-j2pi ms/M)`.
pub fn demodulate(rx: &SampleStream, cfg: &FrameConfig) -> Result<TfGrid> {
    let expected = cfg.stream_len();
    if rx.len() != expected {
        return Err(Error::Framing { expected, got: rx.len() });
    }
    let (n, m) = (cfg.n(), cfg.m());
    let mut bodies = Vec::with_capacity(n * m);
    let mut pos = 0;
    for sym in 0..n {
        pos += cfg.cp_samples(sym);
        bodies.extend_from_slice(&rx.samples[pos..pos + m]);
        pos += m;
    }
    dft_rows(&mut bodies, n, m, FftDirection::Forward);
    let scale = 1.0 / m as f64;
    bodies.iter_mut().for_each(|v| *v *= scale);
    Ok(TfGrid::from_vec(n, m, bodies))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> FrameConfig {
        FrameConfig::from_samples(8, 4, 15e3, 2, 1, 3, 4).unwrap()
    }

    fn grid(cfg: &FrameConfig, seed: u64) -> TfGrid {
        let mut state = seed;
        TfGrid::from_fn(cfg.n(), cfg.m(), |_, _| {
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            };
            Complex64::new(next(), next())
        })
    }

    #[test]
    fn cp_duration_follows_window_schedule() {
        let c = FrameConfig::from_samples(128, 16, 15e3, 8, 5, 6, 4).unwrap();
        let ts = c.sample_period();
        assert_eq!(cp_duration(0, &c).unwrap(), 6.0 * ts);
        assert_eq!(cp_duration(8, &c).unwrap(), 6.0 * ts);
        assert_eq!(cp_duration(1, &c).unwrap(), 5.0 * ts);
        assert!(matches!(cp_duration(16, &c), Err(Error::Index { .. })));
    }

    #[test]
    fn dc_subcarrier_gives_flat_symbol_and_cp() {
        let c = small_cfg();
        let mut x = TfGrid::zeros(4, 8);
        x[(0, 0)] = Complex64::new(1.0, 0.0);
        let tx = modulate(&x, &c).unwrap();
        let first = c.cp_samples(0) + c.m();
        for v in &tx.samples[..first] {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
        assert!(tx.samples[first..].iter().all(|v| v.norm() < 1e-15));

        let y = demodulate(&tx, &c).unwrap();
        assert!((y[(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        // without the 1/M fold-in this would be M
        let raw = y[(0, 0)] * c.m() as f64;
        assert!((raw.re - 8.0).abs() < 1e-10);
    }

    #[test]
    fn zero_grid_and_stream() {
        let c = small_cfg();
        let tx = modulate(&TfGrid::zeros(4, 8), &c).unwrap();
        assert_eq!(tx.len(), c.stream_len());
        assert!(tx.samples.iter().all(|v| v.norm() == 0.0));
        assert_eq!(demodulate(&SampleStream::zeros(c.stream_len()), &c).unwrap().energy(), 0.0);
    }

    #[test]
    fn round_trip_identity_channel() {
        let c = small_cfg();
        let x = grid(&c, 3);
        let y = demodulate(&modulate(&x, &c).unwrap(), &c).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn prefix_copies_body_tail() {
        let c = FrameConfig::from_samples(16, 8, 15e3, 4, 2, 5, 4).unwrap();
        let tx = modulate(&grid(&c, 11), &c).unwrap();
        for n in 0..c.n() {
            let start = body_offset(n, &c);
            let cp = c.cp_samples(n);
            assert_eq!(&tx.samples[start - cp..start], &tx.samples[start + c.m() - cp..start + c.m()]);
        }
        assert_eq!(body_offset(c.n() - 1, &c) + c.m(), c.stream_len());
    }

    #[test]
    fn wrong_length_is_a_framing_error() {
        let c = small_cfg();
        let err = demodulate(&SampleStream::zeros(c.stream_len() - 1), &c).unwrap_err();
        assert!(matches!(err, Error::Framing { .. }));
    }

    #[test]
    fn iq_bytes_round_trip() {
        let s = SampleStream::new(vec![Complex64::new(1.5, -2.25), Complex64::new(-0.0, 3e-300)]);
        let bytes = s.to_le_bytes();
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[..8], &1.5f64.to_le_bytes());
        assert_eq!(SampleStream::from_le_bytes(&bytes).unwrap(), s);
        assert!(SampleStream::from_le_bytes(&bytes[..20]).is_err());
    }
}
