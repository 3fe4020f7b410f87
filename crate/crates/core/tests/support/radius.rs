//! Spectral radius from Gelfand's formula, `rho = lim ||C^m||^(1/m)`.
//!
//! `C^(2^k)` is formed by repeated squaring with renormalization, carrying
//! the log of the discarded scale, so no eigen-solver is involved.

use nalgebra::DMatrix;

pub fn spectral_radius(c: &DMatrix<f64>, squarings: u32) -> f64 {
    let mut m = c.clone();
    let mut log_scale = 0.0f64;
    let norm0 = m.norm();
    if norm0 == 0.0 {
        return 0.0;
    }
    m /= norm0;
    log_scale += norm0.ln();
    let mut power = 1.0f64;
    for _ in 0..squarings {
        m = &m * &m;
        log_scale *= 2.0;
        power *= 2.0;
        let nu = m.norm();
        if nu == 0.0 {
            return 0.0;
        }
        m /= nu;
        log_scale += nu.ln();
    }
    (log_scale / power).exp()
}
