//! Butterworth band-pass design and zero-phase filtering.
//!
//! Design goes analog prototype -> band-pass transform -> bilinear transform
//! with pre-warped edges, and the result is kept as a cascade of second-order
//! sections. With pre-warping, both band edges sit exactly at -3 dB.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::series::{BandDefinition, MultiChannelSeries};

/// Analog prototype order used for band decomposition.
pub const DEFAULT_ORDER: usize = 3;

/// One direct-form II transposed section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z_inv * self.a[1] + z2 * self.a[2];
        num / den
    }

    /// Gain at DC.
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// State that a unit step would leave the section in at steady state.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        [y - self.b[0], self.b[2] - self.a[2] * y]
    }

    fn run(&self, x: &mut [f64], state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let [mut s1, mut s2] = state;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + s1;
            s1 = b1 * xin - a1 * y + s2;
            s2 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// A designed digital band-pass filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoefficients {
    pub sections: Vec<Biquad>,
    pub zeros: Vec<Complex64>,
    pub poles: Vec<Complex64>,
    pub gain: f64,
    /// Analog prototype order; the digital band-pass has order `2 * order`.
    pub order: usize,
    pub band: BandDefinition,
    pub sampling_rate_hz: f64,
}

impl FilterCoefficients {
    /// Expanded transfer-function numerator `b_0..b_m`.
    pub fn numerator(&self) -> Vec<f64> {
        self.sections
            .iter()
            .fold(vec![1.0], |acc, s| poly_mul(&acc, &s.b))
    }

    /// Expanded transfer-function denominator `a_0..a_m`, `a_0 == 1`.
    pub fn denominator(&self) -> Vec<f64> {
        self.sections
            .iter()
            .fold(vec![1.0], |acc, s| poly_mul(&acc, &s.a))
    }

    /// Number of taps of the expanded transfer function.
    pub fn n_taps(&self) -> usize {
        2 * self.sections.len() + 1
    }

    /// Edge padding used by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * (self.n_taps() - 1)
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sampling_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.poles.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_radius() < 1.0
    }

    /// Impulse response of the forward (single-pass) filter.
    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut x = vec![0.0; len];
        if len > 0 {
            x[0] = 1.0;
        }
        for s in &self.sections {
            s.run(&mut x, [0.0, 0.0]);
        }
        x
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Digital Butterworth band-pass of analog prototype order `order`.
pub fn design_bandpass(order: usize, band: &BandDefinition, fs_hz: f64) -> Result<FilterCoefficients> {
    if order == 0 {
        return Err(Error::invalid("filter order must be positive"));
    }
    if !(fs_hz > 0.0) {
        return Err(Error::invalid(format!("sampling rate must be positive, got {fs_hz}")));
    }
    band.validate(fs_hz)?;

    let fs2 = 2.0 * fs_hz;
    let warp = |f: f64| fs2 * (PI * f / fs_hz).tan();
    let (w1, w2) = (warp(band.low_hz), warp(band.high_hz));
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    // analog prototype poles, left half plane
    let n = order as f64;
    let proto: Vec<Complex64> = (0..order)
        .map(|k| {
            let m = -(n - 1.0) + 2.0 * k as f64;
            -Complex64::from_polar(1.0, PI * m / (2.0 * n))
        })
        .collect();

    // low-pass -> band-pass: each prototype pole splits in two
    let mut analog = Vec::with_capacity(2 * order);
    for p in &proto {
        let half = p * (bw / 2.0);
        let disc = (half * half - w0_sq).sqrt();
        analog.push(half + disc);
        analog.push(half - disc);
    }
    let analog_gain = bw.powi(order as i32);

    // bilinear transform; analog zeros at s = 0 map to z = 1, those at
    // infinity to z = -1
    let poles: Vec<Complex64> = analog.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    let denom = analog
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, p| acc * (fs2 - p));
    let gain = analog_gain * (Complex64::new(fs2.powi(order as i32), 0.0) / denom).re;

    let mut zeros = vec![Complex64::new(1.0, 0.0); order];
    zeros.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), order));

    let mut sections: Vec<Biquad> = pair_poles(&poles)
        .into_iter()
        .map(|(p1, p2)| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(p1 + p2).re, (p1 * p2).re],
        })
        .collect();
    for s in sections.iter_mut().take(1) {
        s.b.iter_mut().for_each(|v| *v *= gain);
    }

    Ok(FilterCoefficients {
        sections,
        zeros,
        poles,
        gain,
        order,
        band: band.clone(),
        sampling_rate_hz: fs_hz,
    })
}

/// Groups poles into conjugate (or real) pairs, farthest from the unit
/// circle first.
fn pair_poles(poles: &[Complex64]) -> Vec<(Complex64, Complex64)> {
    const IMAG_TOL: f64 = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > IMAG_TOL).collect();
    let mut real: Vec<Complex64> = poles
        .iter()
        .filter(|p| p.im.abs() <= IMAG_TOL)
        .map(|p| Complex64::new(p.re, 0.0))
        .collect();
    let mut pairs: Vec<(Complex64, Complex64)> = complex.drain(..).map(|p| (p, p.conj())).collect();
    real.sort_by(|a, b| a.re.total_cmp(&b.re));
    for chunk in real.chunks(2) {
        let second = chunk.get(1).copied().unwrap_or(Complex64::new(0.0, 0.0));
        pairs.push((chunk[0], second));
    }
    pairs.sort_by(|a, b| a.0.norm().max(a.1.norm()).total_cmp(&b.0.norm().max(b.1.norm())));
    pairs
}

/// Forward pass with initial state scaled to the first input sample.
fn sosfilt_steady(sections: &[Biquad], x: &mut [f64]) {
    let x0 = x[0];
    let mut scale = 1.0;
    for s in sections {
        let [z1, z2] = s.step_state();
        s.run(x, [z1 * scale * x0, z2 * scale * x0]);
        scale *= s.dc_gain();
    }
}

/// Zero-phase forward-backward filtering of one channel.
pub fn filtfilt_channel(coeffs: &FilterCoefficients, x: &[f64]) -> Result<Vec<f64>> {
    let pad = coeffs.pad_len();
    let n = x.len();
    if n <= pad {
        return Err(Error::TooShort { len: n, required: pad });
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (x[0], x[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

    sosfilt_steady(&coeffs.sections, &mut ext);
    ext.reverse();
    sosfilt_steady(&coeffs.sections, &mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Applies [`filtfilt_channel`] to every channel.
pub fn filtfilt(coeffs: &FilterCoefficients, series: &MultiChannelSeries) -> Result<MultiChannelSeries> {
    series.map_channels(|_, x| filtfilt_channel(coeffs, x))
}

/// Band components keyed by band name, in request order.
#[derive(Debug, Clone, PartialEq)]
pub struct BandDecomposition {
    components: Vec<(BandDefinition, MultiChannelSeries)>,
}

impl BandDecomposition {
    pub fn get(&self, name: &str) -> Option<&MultiChannelSeries> {
        self.components.iter().find(|(b, _)| b.name == name).map(|(_, s)| s)
    }

    pub fn names(&self) -> Vec<&str> {
        self.components.iter().map(|(b, _)| b.name.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BandDefinition, &MultiChannelSeries)> {
        self.components.iter().map(|(b, s)| (b, s))
    }

    pub fn into_inner(self) -> Vec<(BandDefinition, MultiChannelSeries)> {
        self.components
    }
}

/// Filters `series` independently through each band's order-3 band-pass.
pub fn decompose_bands(series: &MultiChannelSeries, bands: &[BandDefinition]) -> Result<BandDecomposition> {
    for (i, b) in bands.iter().enumerate() {
        if bands[..i].iter().any(|o| o.name == b.name) {
            return Err(Error::invalid(format!("band `{}` requested twice", b.name)));
        }
    }
    let components = bands
        .iter()
        .map(|band| {
            let coeffs = design_bandpass(DEFAULT_ORDER, band, series.sampling_rate_hz())?;
            Ok((band.clone(), filtfilt(&coeffs, series)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BandDecomposition { components })
}
