//! On-grid doubly-selective channel: path lists, EVA-style random channel
//! generation, discrete-time application and complex AWGN.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::frame::FrameConfig;
use crate::waveform::SampleStream;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// One propagation path on the DD grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    /// Complex gain, serialized as `[re, im]`.
    pub gain: Complex64,
    pub delay_idx: usize,
    pub doppler_idx: i64,
}

impl PathSpec {
    pub fn new(gain: Complex64, delay_idx: usize, doppler_idx: i64) -> Self {
        PathSpec { gain, delay_idx, doppler_idx }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub paths: Vec<PathSpec>,
}

impl ChannelSpec {
    pub fn new(paths: Vec<PathSpec>) -> Self {
        ChannelSpec { paths }
    }

    /// Unit-gain, zero-delay, zero-Doppler channel.
    pub fn identity() -> Self {
        ChannelSpec::new(vec![PathSpec::new(Complex64::new(1.0, 0.0), 0, 0)])
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Checks the on-grid ranges and that the regular CP covers every delay.
    pub fn validate(&self, cfg: &FrameConfig) -> Result<()> {
        let half = (cfg.n() / 2) as i64;
        for (i, p) in self.paths.iter().enumerate() {
            if p.delay_idx > cfg.cp_reg_samples() {
                return config_err(format!(
                    "path {i}: delay {} exceeds the regular CP of {} samples",
                    p.delay_idx,
                    cfg.cp_reg_samples()
                ));
            }
            if p.doppler_idx < -half || p.doppler_idx >= half {
                return config_err(format!("path {i}: Doppler index {} outside [-{half}, {half})", p.doppler_idx));
            }
        }
        Ok(())
    }

    /// True when no two paths share a delay bin.
    pub fn has_distinct_delays(&self) -> bool {
        let mut d: Vec<usize> = self.paths.iter().map(|p| p.delay_idx).collect();
        d.sort_unstable();
        d.windows(2).all(|w| w[0] != w[1])
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Tapped power-delay profile used by [`gen_eva`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDelayProfile {
    pub delays_ns: Vec<f64>,
    pub powers_db: Vec<f64>,
}

impl PowerDelayProfile {
    /// 3GPP Extended Vehicular A.
    pub fn eva() -> Self {
        PowerDelayProfile {
            delays_ns: vec![0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0],
            powers_db: vec![0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9],
        }
    }

    /// Taps binned onto the delay grid, same-bin powers summed and the total
    /// normalized to one. Returned sorted by delay bin.
    pub fn binned(&self, cfg: &FrameConfig) -> Result<Vec<(usize, f64)>> {
        if self.delays_ns.len() != self.powers_db.len() || self.delays_ns.is_empty() {
            return config_err("power-delay profile needs matching, non-empty delay and power lists");
        }
        let mut bins: Vec<(usize, f64)> = Vec::new();
        for (&d, &p) in self.delays_ns.iter().zip(&self.powers_db) {
            let (_, l) = quantize(0.0, d * 1e-9, cfg)?;
            let lin = 10f64.powf(p / 10.0);
            match bins.iter_mut().find(|(b, _)| *b == l) {
                Some(entry) => entry.1 += lin,
                None => bins.push((l, lin)),
            }
        }
        bins.sort_by_key(|&(l, _)| l);
        let total: f64 = bins.iter().map(|b| b.1).sum();
        bins.iter_mut().for_each(|b| b.1 /= total);
        Ok(bins)
    }
}

/// Maximum Doppler shift in Hz for a carrier and speed.
pub fn max_doppler_hz(carrier_hz: f64, speed_kmh: f64) -> f64 {
    carrier_hz * (speed_kmh / 3.6) / SPEED_OF_LIGHT
}

/// Maximum Doppler index `round(|nu_max| * N * T)`.
pub fn max_doppler_idx(cfg: &FrameConfig, carrier_hz: f64, speed_kmh: f64) -> i64 {
    (max_doppler_hz(carrier_hz, speed_kmh).abs() * cfg.n() as f64 * cfg.symbol_period()).round() as i64
}

/// Nearest on-grid `(doppler_idx, delay_idx)` for a physical Doppler and delay.
pub fn quantize(nu_hz: f64, tau_s: f64, cfg: &FrameConfig) -> Result<(i64, usize)> {
    let doppler_res = 1.0 / (cfg.n() as f64 * cfg.symbol_period());
    let nu_limit = (cfg.n() / 2) as f64 * doppler_res;
    if !nu_hz.is_finite() || nu_hz.abs() > nu_limit {
        return Err(Error::Range(format!("Doppler {nu_hz} Hz outside +/-{nu_limit} Hz")));
    }
    let tau_limit = cfg.m() as f64 * cfg.sample_period();
    if !tau_s.is_finite() || tau_s < 0.0 || tau_s >= tau_limit {
        return Err(Error::Range(format!("delay {tau_s} s outside [0, {tau_limit})")));
    }
    let k = (nu_hz / doppler_res).round() as i64;
    let l = (tau_s / cfg.sample_period()).round() as usize;
    // nu = +N/2 bins rounds onto the alias -N/2
    let half = (cfg.n() / 2) as i64;
    let k = if k >= half && cfg.n().is_multiple_of(2) { k - cfg.n() as i64 } else { k };
    Ok((k, l.min(cfg.m() - 1)))
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let sd = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * sd, im * sd)
}

/// Random EVA-style channel: per-bin Rayleigh gains following the binned
/// profile and Jakes Doppler `nu_max * cos(theta)` rounded to the grid.
pub fn gen_eva<R: Rng + ?Sized>(
    cfg: &FrameConfig,
    profile: &PowerDelayProfile,
    carrier_hz: f64,
    speed_kmh: f64,
    rng: &mut R,
) -> Result<ChannelSpec> {
    let bins = profile.binned(cfg)?;
    let nu_max = max_doppler_hz(carrier_hz, speed_kmh);
    let doppler_res = 1.0 / (cfg.n() as f64 * cfg.symbol_period());
    let mut paths = Vec::with_capacity(bins.len());
    for (l, power) in bins {
        let gain = complex_gaussian(rng, power);
        let theta: f64 = rng.random_range(0.0..2.0 * PI);
        let nu = nu_max * theta.cos();
        let k = (nu / doppler_res).round() as i64;
        let half = (cfg.n() / 2) as i64;
        if k < -half || k >= half {
            return Err(Error::Range(format!("Doppler index {k} exceeds the grid; lower speed or raise N")));
        }
        paths.push(PathSpec::new(gain, l, k));
    }
    Ok(ChannelSpec::new(paths))
}

/// Passes a frame through the channel and adds AWGN of per-sample variance
/// `noise_var`.
///
/// Time zero is the first body sample of OFDM symbol 0, so the symbol-0
/// prefix sits at negative time: `y[p] = sum_i h_i exp(j2pi k_i (p - cp0 - l_i)/(NM)) x[p - l_i] + w[p]`
/// with `x[negative] = 0`.
pub fn apply<R: Rng + ?Sized>(
    tx: &SampleStream,
    ch: &ChannelSpec,
    cfg: &FrameConfig,
    noise_var: f64,
    rng: &mut R,
) -> Result<SampleStream> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return config_err(format!("noise variance must be non-negative, got {noise_var}"));
    }
    let len = tx.len();
    let mut y = vec![Complex64::new(0.0, 0.0); len];
    let origin = cfg.cp_samples(0) as f64;
    let nm = (cfg.n() * cfg.m()) as f64;
    for p in &ch.paths {
        if p.delay_idx >= len.max(1) {
            return config_err(format!("path delay {} exceeds stream length {len}", p.delay_idx));
        }
        let slope = 2.0 * PI * p.doppler_idx as f64 / nm;
        for (s, out) in y.iter_mut().enumerate().skip(p.delay_idx) {
            let t = s as f64 - origin - p.delay_idx as f64;
            *out += p.gain * Complex64::from_polar(1.0, slope * t) * tx.samples[s - p.delay_idx];
        }
    }
    if noise_var > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(rng, noise_var);
        }
    }
    Ok(SampleStream::new(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> FrameConfig {
        FrameConfig::from_samples(16, 8, 15e3, 4, 4, 5, 4).unwrap()
    }

    fn stream(len: usize, seed: u64) -> SampleStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SampleStream::new((0..len).map(|_| complex_gaussian(&mut rng, 1.0)).collect())
    }

    #[test]
    fn identity_channel_is_exact() {
        let c = cfg();
        let x = stream(c.stream_len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = apply(&x, &ChannelSpec::identity(), &c, 0.0, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pure_delay_scales_and_shifts() {
        let c = cfg();
        let x = stream(c.stream_len(), 2);
        let ch = ChannelSpec::new(vec![PathSpec::new(Complex64::new(0.5, 0.0), 3, 0)]);
        let y = apply(&x, &ch, &c, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(y.samples[..3].iter().all(|v| v.norm() == 0.0));
        for s in 3..x.len() {
            assert!((y.samples[s] - x.samples[s - 3] * 0.5).norm() < 1e-15);
        }
    }

    #[test]
    fn doppler_is_a_phase_ramp() {
        let c = cfg();
        let x = stream(c.stream_len(), 3);
        let ch = ChannelSpec::new(vec![PathSpec::new(Complex64::new(1.0, 0.0), 0, 2)]);
        let y = apply(&x, &ch, &c, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let slope = 2.0 * PI * 2.0 / (c.n() * c.m()) as f64;
        for s in 0..x.len() {
            assert!((y.samples[s].norm() - x.samples[s].norm()).abs() < 1e-12);
            let expect = Complex64::from_polar(1.0, slope * (s as f64 - c.cp_samples(0) as f64));
            assert!((y.samples[s] / x.samples[s] - expect).norm() < 1e-12);
        }
        for s in 1..x.len() {
            let step = (y.samples[s] / x.samples[s]) / (y.samples[s - 1] / x.samples[s - 1]);
            assert!((step.arg() - slope).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_in_input() {
        let c = cfg();
        let (x, z) = (stream(c.stream_len(), 4), stream(c.stream_len(), 5));
        let ch = ChannelSpec::new(vec![
            PathSpec::new(Complex64::new(0.3, 0.1), 1, -3),
            PathSpec::new(Complex64::new(-0.2, 0.7), 4, 2),
        ]);
        let (a, b) = (Complex64::new(0.5, -1.0), Complex64::new(2.0, 0.25));
        let mix = SampleStream::new(x.samples.iter().zip(&z.samples).map(|(p, q)| a * p + b * q).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lhs = apply(&mix, &ch, &c, 0.0, &mut rng).unwrap();
        let yx = apply(&x, &ch, &c, 0.0, &mut rng).unwrap();
        let yz = apply(&z, &ch, &c, 0.0, &mut rng).unwrap();
        for s in 0..lhs.len() {
            assert!((lhs.samples[s] - (a * yx.samples[s] + b * yz.samples[s])).norm() < 1e-12);
        }
    }

    #[test]
    fn noise_power_matches_variance() {
        let n = 200_000;
        let var = 0.37;
        let zero = SampleStream::zeros(n);
        let c = cfg();
        let y = apply(&zero, &ChannelSpec::identity(), &c, var, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mean: f64 = y.samples.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        // |w|^2 is exponential with sd = var, so the mean has sd var/sqrt(n)
        assert!((mean - var).abs() < 3.0 * var / (n as f64).sqrt(), "mean power {mean}");
    }

    #[test]
    fn same_seed_same_realization() {
        let c = FrameConfig::from_samples(128, 128, 15e3, 8, 5, 6, 20).unwrap();
        let p = PowerDelayProfile::eva();
        let a = gen_eva(&c, &p, 5e9, 500.0, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = gen_eva(&c, &p, 5e9, 500.0, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        let x = stream(c.stream_len(), 1);
        let ya = apply(&x, &a, &c, 0.1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let yb = apply(&x, &a, &c, 0.1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(ya, yb);
    }

    #[test]
    fn eva_bins_at_full_scale() {
        let c = FrameConfig::from_samples(128, 128, 15e3, 8, 5, 6, 20).unwrap();
        let bins = PowerDelayProfile::eva().binned(&c).unwrap();
        let delays: Vec<usize> = bins.iter().map(|b| b.0).collect();
        assert_eq!(delays, vec![0, 1, 2, 3, 5]);
        let total: f64 = bins.iter().map(|b| b.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let ch = gen_eva(&c, &PowerDelayProfile::eva(), 5e9, 500.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(ch.has_distinct_delays());
        assert!(ch.paths.iter().all(|p| p.doppler_idx.abs() <= 20));
        ch.validate(&c).unwrap();
    }

    #[test]
    fn full_scale_max_doppler() {
        let c = FrameConfig::from_samples(128, 128, 15e3, 8, 5, 6, 20).unwrap();
        let nu = max_doppler_hz(5e9, 500.0);
        assert!((nu - 2316.4).abs() < 0.5, "{nu}");
        assert_eq!(max_doppler_idx(&c, 5e9, 500.0), 20);
    }

    #[test]
    fn zero_speed_zero_doppler() {
        let c = FrameConfig::from_samples(128, 128, 15e3, 8, 5, 6, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let ch = gen_eva(&c, &PowerDelayProfile::eva(), 5e9, 0.0, &mut rng).unwrap();
            assert!(ch.paths.iter().all(|p| p.doppler_idx == 0));
        }
    }

    #[test]
    fn quantize_rounds_to_grid() {
        let c = cfg();
        let res = 1.0 / (c.n() as f64 * c.symbol_period());
        assert_eq!(quantize(0.0, 0.0, &c).unwrap(), (0, 0));
        assert_eq!(quantize(res, 0.0, &c).unwrap().0, 1);
        assert_eq!(quantize(1.4 * res, 0.0, &c).unwrap().0, 1);
        assert_eq!(quantize(-1.6 * res, 2.2 * c.sample_period(), &c).unwrap(), (-2, 2));
        assert!(matches!(quantize(5.0 * res, 0.0, &c), Err(Error::Range(_))));
        assert!(matches!(quantize(0.0, -1e-9, &c), Err(Error::Range(_))));
    }

    #[test]
    fn json_gain_is_re_im_pair() {
        let ch = ChannelSpec::new(vec![PathSpec::new(Complex64::new(0.25, -1.5), 2, -3)]);
        let text = ch.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["paths"][0]["gain"], serde_json::json!([0.25, -1.5]));
        assert_eq!(ChannelSpec::from_json(&text).unwrap(), ch);
    }

    #[test]
    fn validation_flags_uncovered_delay() {
        let c = cfg();
        let ch = ChannelSpec::new(vec![PathSpec::new(Complex64::new(1.0, 0.0), 5, 0)]);
        assert!(ch.validate(&c).is_err());
        let ch = ChannelSpec::new(vec![PathSpec::new(Complex64::new(1.0, 0.0), 0, 4)]);
        assert!(ch.validate(&c).is_err());
    }
}
