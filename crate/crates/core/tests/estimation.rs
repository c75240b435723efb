//! Embedded-pilot estimation through the sampled waveform chain.

use num_complex::Complex64;
use otfs_core::channel::{apply, complex_gaussian};
use otfs_core::detection::{map_bits, Constellation};
use otfs_core::estimation::{embed_pilot, extract_observation, ml_estimate, threshold_paths, GuardRows, PilotLayout};
use otfs_core::{demodulate, isfft, modulate, sfft, ChannelSpec, DdGrid, FrameConfig, PathSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chain(x: &DdGrid, ch: &ChannelSpec, cfg: &FrameConfig, noise_var: f64, rng: &mut impl Rng) -> DdGrid {
    let tx = modulate(&isfft(x, cfg).unwrap(), cfg).unwrap();
    let rx = apply(&tx, ch, cfg, cfg.m() as f64 * noise_var, rng).unwrap();
    sfft(&demodulate(&rx, cfg).unwrap(), cfg).unwrap()
}

fn one_path_per_bin(l_max: usize, k_max: i64, rng: &mut impl Rng) -> ChannelSpec {
    let count = rng.random_range(1..=l_max + 1);
    let mut bins: Vec<usize> = (0..=l_max).collect();
    let paths = (0..count)
        .map(|_| {
            let l = bins.swap_remove(rng.random_range(0..bins.len()));
            let mag = rng.random_range(0.3..1.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            PathSpec::new(Complex64::from_polar(mag, phase), l, rng.random_range(-k_max..=k_max))
        })
        .collect();
    ChannelSpec::new(paths)
}

fn framed(layout: &PilotLayout, cfg: &FrameConfig, rng: &mut impl Rng) -> DdGrid {
    let c = Constellation::qpsk();
    let mask = layout.data_mask(cfg);
    let bits: Vec<bool> = (0..layout.data_cells(cfg) * 2).map(|_| rng.random()).collect();
    embed_pilot(&map_bits(&bits, &c, cfg.n(), cfg.m(), Some(&mask)).unwrap(), layout, cfg).unwrap()
}

#[test]
fn ml_is_exact_without_noise_even_with_data() {
    let cfg = FrameConfig::from_samples(32, 32, 15e3, 8, 4, 5, 32).unwrap();
    let layout = PilotLayout::centered(&cfg, Complex64::new(10.0, 0.0), 5, 4, 3).unwrap();
    assert_eq!(layout.guard_rows(), GuardRows::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..25 {
        let ch = one_path_per_bin(4, 5, &mut rng);
        let x = framed(&layout, &cfg, &mut rng);
        let y = chain(&x, &ch, &cfg, 0.0, &mut rng);
        let obs = extract_observation(&y, &layout, &cfg).unwrap();
        let est = ml_estimate(&obs, &layout, &cfg, 0.1).unwrap();
        assert_eq!(est.len(), ch.len());
        for p in &ch.paths {
            let hit = est.paths.iter().find(|e| e.delay_idx == p.delay_idx).expect("missed delay bin");
            assert_eq!(hit.doppler_idx, p.doppler_idx);
            assert!((hit.gain - p.gain).norm() <= 1e-9 * p.gain.norm());
        }
    }
}

#[test]
fn ml_beats_threshold_reading_under_noise() {
    // Mean squared pilot-response error of the two estimates, measured on a
    // fresh pilot-only transmission.
    let cfg = FrameConfig::from_samples(32, 32, 15e3, 8, 4, 5, 32).unwrap();
    let noise_var: f64 = 0.1;
    let snr_p = 1000.0;
    let x_p = (snr_p * noise_var).sqrt();
    let layout = PilotLayout::centered(&cfg, Complex64::new(x_p, 0.0), 5, 4, 3).unwrap();
    let threshold = 3.0 / f64::sqrt(snr_p);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut ml_err, mut th_err) = (0.0, 0.0);
    for _ in 0..20 {
        let ch = one_path_per_bin(4, 5, &mut rng);
        let x = framed(&layout, &cfg, &mut rng);
        let y = chain(&x, &ch, &cfg, noise_var, &mut rng);
        let obs = extract_observation(&y, &layout, &cfg).unwrap();
        let ml = ml_estimate(&obs, &layout, &cfg, threshold).unwrap();
        let th = threshold_paths(&obs, &layout, &cfg, threshold * x_p);
        let probe = DdGrid::from_fn(32, 32, |_, _| complex_gaussian(&mut rng, 1.0));
        let truth = otfs_core::effective::build_matrix(&ch, &cfg).apply(&probe);
        ml_err += otfs_core::effective::build_matrix(&ml, &cfg).apply(&probe).rel_frobenius_err(&truth);
        th_err += otfs_core::effective::rcp_reference(&th, &cfg).apply(&probe).rel_frobenius_err(&truth);
    }
    assert!(ml_err < 0.5 * th_err, "ml {ml_err} threshold {th_err}");
}
