//! Direct-DFT periodogram, written out independently of any filter code.

use std::f64::consts::PI;

/// `(frequency_hz, power)` at the Fourier frequencies `k fs / n`,
/// `k = 0..=n/2`.
pub fn periodogram(x: &[f64], fs: f64) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let w = 2.0 * PI * k as f64 / n as f64;
            let (mut re, mut im) = (0.0, 0.0);
            // rotate incrementally; resynchronize to bound the drift
            let (c, s) = (w.cos(), w.sin());
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for (t, v) in x.iter().enumerate() {
                if t % 256 == 0 {
                    cr = (w * t as f64).cos();
                    ci = (w * t as f64).sin();
                }
                re += v * cr;
                im -= v * ci;
                let nr = cr * c - ci * s;
                ci = cr * s + ci * c;
                cr = nr;
            }
            (k as f64 * fs / n as f64, (re * re + im * im) / n as f64)
        })
        .collect()
}

/// Share of periodogram power at frequencies within `[lo, hi]`.
pub fn band_fraction(pg: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let total: f64 = pg.iter().map(|p| p.1).sum();
    let inside: f64 = pg.iter().filter(|p| p.0 >= lo && p.0 <= hi).map(|p| p.1).sum();
    inside / total
}
