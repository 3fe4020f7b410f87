//! Hand-built two-group studies with group-specific generators and
//! random-effect SDs, and a Kolmogorov-Smirnov reference.

use mespec_core::mixed::{build_design, fit_reml, FitConfig, MixedVarFit};
use mespec_core::sim::simulate_var;
use mespec_core::var::companion_spectral_radius;
use mespec_core::{MultiChannelSeries, StudyDataset, SubjectRecord};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub struct GroupSpec {
    /// Per lag.
    pub phi: Vec<DMatrix<f64>>,
    /// Entrywise random-effect SD per lag.
    pub sd: Vec<DMatrix<f64>>,
    pub subjects: usize,
}

impl GroupSpec {
    pub fn lag1(phi: DMatrix<f64>, sd: f64, subjects: usize) -> Self {
        let r = phi.nrows();
        Self {
            phi: vec![phi],
            sd: vec![DMatrix::from_element(r, r, sd)],
            subjects,
        }
    }
}

pub fn study<G: Rng>(groups: &[GroupSpec], t: usize, rng: &mut G) -> StudyDataset {
    let r = groups[0].phi[0].nrows();
    let names: Vec<String> = (1..=r).map(|i| format!("ch{i}")).collect();
    let mut subjects = Vec::new();
    for (g, spec) in groups.iter().enumerate() {
        for i in 0..spec.subjects {
            let coeffs = loop {
                let m: Vec<DMatrix<f64>> = spec
                    .phi
                    .iter()
                    .zip(&spec.sd)
                    .map(|(a, s)| DMatrix::from_fn(r, r, |i, j| a[(i, j)] + s[(i, j)] * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                if companion_spectral_radius(&m).unwrap() < 1.0 {
                    break m;
                }
            };
            let x = simulate_var(&coeffs, 1.0, t, 200, rng);
            let series = MultiChannelSeries::new(x, names.clone(), 128.0).unwrap();
            subjects.push(SubjectRecord::new(format!("g{}s{i}", g + 1), g + 1, series).unwrap());
        }
    }
    StudyDataset::new(subjects).unwrap()
}

/// REML fits of every target channel at lag `p`.
pub fn fit_all(ds: &StudyDataset, p: usize, cfg: &FitConfig) -> Vec<MixedVarFit> {
    (0..ds.n_channels())
        .map(|target| fit_reml(&build_design(ds, target, p).unwrap(), cfg).unwrap())
        .collect()
}

/// Asymptotic Kolmogorov-Smirnov p-value of `sample` against `cdf`, with
/// Stephens' small-sample correction of the statistic.
pub fn ks_pvalue(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let f = cdf(*v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
        p += 2.0 * sign * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}
