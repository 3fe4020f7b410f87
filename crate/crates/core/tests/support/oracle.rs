//! Dense reference for the mixed-model deviance: forms the marginal
//! covariance `H = Z D Z' + I` (so `V = sigma^2 H`) explicitly and
//! evaluates the profiled likelihoods by direct factorization.

use mespec_core::mixed::{MixedDesign, Objective};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

pub struct DenseEvaluation {
    pub deviance: f64,
    pub beta: DVector<f64>,
    pub pwrss: f64,
}

pub fn dense_deviance(design: &MixedDesign, theta: &[f64], objective: Objective) -> DenseEvaluation {
    let x = design.fixed_design_dense();
    let z = design.random_design_dense();
    let y = DVector::from_column_slice(&design.response);
    let q = design.block_size();
    let n = design.n_obs();
    let k = design.n_fixed();
    let mut d = DVector::zeros(z.ncols());
    for (i, s) in design.subjects.iter().enumerate() {
        for j in 0..q {
            let t = theta[s.group * q + j];
            d[i * q + j] = t * t;
        }
    }
    let zd = &z * DMatrix::from_diagonal(&d);
    let h = zd * z.transpose() + DMatrix::identity(n, n);
    let hc = h.clone().cholesky().expect("H is positive definite");
    let logdet_h = 2.0 * hc.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let hinv_x = hc.solve(&x);
    let hinv_y = hc.solve(&y);
    let xhx = x.transpose() * &hinv_x;
    let xhy = x.transpose() * &hinv_y;
    let xc = xhx.clone().cholesky().expect("X'H^-1X is positive definite");
    let logdet_xhx = 2.0 * xc.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let beta = xc.solve(&xhy);
    let resid = &y - &x * &beta;
    let pwrss = resid.dot(&hc.solve(&resid));
    let deviance = match objective {
        Objective::Reml => {
            let m = (n - k) as f64;
            logdet_h + logdet_xhx + m * (1.0 + (2.0 * PI * pwrss / m).ln())
        }
        Objective::Ml => {
            let m = n as f64;
            logdet_h + m * (1.0 + (2.0 * PI * pwrss / m).ln())
        }
    };
    DenseEvaluation { deviance, beta, pwrss }
}
