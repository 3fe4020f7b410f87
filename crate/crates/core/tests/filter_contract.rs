mod support;

use mespec_core::filter::{decompose_bands, design_bandpass, filtfilt_channel, DEFAULT_ORDER};
use mespec_core::{BandDefinition, MultiChannelSeries};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use support::spectral::{band_fraction, periodogram};

const FS: f64 = 128.0;

fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn sine(freq: f64, n: usize) -> Vec<f64> {
    (0..n).map(|t| (2.0 * PI * freq * t as f64 / FS).sin()).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn band_edges_are_half_power_for_every_canonical_band() {
    for band in BandDefinition::canonical() {
        let f = design_bandpass(DEFAULT_ORDER, &band, FS).unwrap();
        for edge in [band.low_hz, band.high_hz] {
            let g = db(f.magnitude(edge));
            assert!((g + 3.0103).abs() < 0.1, "{} edge {edge}: {g} dB", band.name);
        }
        assert!(f.is_stable());
        assert_eq!(f.denominator()[0], 1.0);
    }
}

#[test]
fn white_noise_power_concentrates_in_passband() {
    let x = white_noise(3840, 1);
    for band in BandDefinition::canonical() {
        let f = design_bandpass(DEFAULT_ORDER, &band, FS).unwrap();
        let y = filtfilt_channel(&f, &x).unwrap();
        let share = band_fraction(&periodogram(&y, FS), band.low_hz, band.high_hz);
        assert!(share >= 0.8, "{}: {share}", band.name);
    }
}

/// Lag in `-max..=max` maximizing the cross-correlation of `y` against `x`
/// over the central half of the record.
fn best_lag(x: &[f64], y: &[f64], max: i64) -> i64 {
    let n = x.len() as i64;
    let (lo, hi) = (n / 4, 3 * n / 4);
    (-max..=max)
        .max_by(|a, b| {
            let c = |l: i64| (lo..hi).map(|t| x[t as usize] * y[(t + l) as usize]).sum::<f64>();
            c(*a).total_cmp(&c(*b))
        })
        .unwrap()
}

#[test]
fn band_center_sine_passes_without_lag() {
    for band in BandDefinition::canonical() {
        let f = design_bandpass(DEFAULT_ORDER, &band, FS).unwrap();
        let fc = 0.5 * (band.low_hz + band.high_hz);
        let n = 1280;
        let x = sine(fc, n);
        let y = filtfilt_channel(&f, &x).unwrap();
        assert_eq!(best_lag(&x, &y, 20), 0, "{}", band.name);
        let expected = f.magnitude(fc).powi(2);
        let central = n / 4..3 * n / 4;
        let ratio = rms(&y[central.clone()]) / rms(&x[central]);
        assert!((ratio / expected - 1.0).abs() < 0.02, "{}: {ratio} vs {expected}", band.name);
    }
}

#[test]
fn far_out_of_band_sine_is_suppressed() {
    let band = BandDefinition::canonical_by_name("delta").unwrap();
    let f = design_bandpass(DEFAULT_ORDER, &band, FS).unwrap();
    let fc = 0.5 * (band.low_hz + band.high_hz);
    let n = 2560;
    let x = sine(10.0 * fc, n);
    let y = filtfilt_channel(&f, &x).unwrap();
    let central = n / 4..3 * n / 4;
    let att = db(rms(&y[central.clone()]) / rms(&x[central]));
    assert!(att <= -30.0, "{att} dB");
    assert!(db(f.magnitude(10.0 * fc).powi(2)) <= -30.0);
}

#[test]
fn theta_sine_lands_in_theta() {
    let series = MultiChannelSeries::from_columns(vec![sine(6.0, 3840)], vec!["c".into()], FS).unwrap();
    let dec = decompose_bands(&series, &BandDefinition::canonical()).unwrap();
    let powers: Vec<(String, f64)> = dec
        .iter()
        .map(|(b, s)| (b.name.clone(), s.channel(0).iter().map(|v| v * v).sum()))
        .collect();
    let total: f64 = powers.iter().map(|p| p.1).sum();
    let theta = powers.iter().find(|p| p.0 == "theta").unwrap().1;
    assert!(theta / total >= 0.95, "{powers:?}");
    assert_eq!(dec.names(), vec!["delta", "theta", "alpha", "beta", "gamma"]);
}

#[test]
fn reversal_commutes_away_from_the_edges() {
    let x = white_noise(2000, 3);
    let band = BandDefinition::canonical_by_name("alpha").unwrap();
    let f = design_bandpass(DEFAULT_ORDER, &band, FS).unwrap();
    let y = filtfilt_channel(&f, &x).unwrap();
    let xr: Vec<f64> = x.iter().rev().copied().collect();
    let mut yr = filtfilt_channel(&f, &xr).unwrap();
    yr.reverse();
    let margin = 500;
    for t in margin..x.len() - margin {
        assert!((y[t] - yr[t]).abs() < 1e-6, "t={t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn zero_phase_filtering_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let band = BandDefinition::canonical_by_name("beta").unwrap();
        let f = design_bandpass(DEFAULT_ORDER, &band, FS).unwrap();
        let x = white_noise(300, seed);
        let z = white_noise(300, seed + 1);
        let mix: Vec<f64> = x.iter().zip(&z).map(|(u, v)| a * u + b * v).collect();
        let fx = filtfilt_channel(&f, &x).unwrap();
        let fz = filtfilt_channel(&f, &z).unwrap();
        let fm = filtfilt_channel(&f, &mix).unwrap();
        prop_assert_eq!(fm.len(), mix.len());
        for t in 0..mix.len() {
            prop_assert!((fm[t] - (a * fx[t] + b * fz[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn any_valid_band_is_stable_with_half_power_edges(lo in 0.5f64..40.0, width in 1.0f64..20.0) {
        let hi = (lo + width).min(60.0);
        let band = BandDefinition::new("custom", lo, hi);
        let f = design_bandpass(DEFAULT_ORDER, &band, FS).unwrap();
        prop_assert!(f.max_pole_radius() < 1.0);
        prop_assert!((db(f.magnitude(lo)) + 3.0103).abs() < 0.1);
        prop_assert!((db(f.magnitude(hi)) + 3.0103).abs() < 0.1);
    }
}
