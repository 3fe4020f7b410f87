mod support;

use mespec_core::mixed::*;
use mespec_core::sim::{EffectSd, Generator, SimulationConfig};
use mespec_core::{MultiChannelSeries, StudyDataset, SubjectRecord};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracle::dense_deviance;

fn generator(r: usize, sd: f64, seed: u64) -> Generator {
    let mut cfg = SimulationConfig::with_seed(seed);
    cfg.channels = r;
    cfg.generator_lag = 1;
    cfg.lag2_scale = 0.0;
    cfg.target_radius = 0.6;
    cfg.random_effect_sd = vec![EffectSd::Scalar(sd)];
    cfg.burn_in = 100;
    cfg.resolve().unwrap()
}

/// `n1` group-1 and `n2` group-2 subjects from the generator.
fn dataset(gen: &Generator, n1: usize, n2: usize, t: usize, rng: &mut ChaCha8Rng) -> StudyDataset {
    let mut subjects = Vec::new();
    for i in 0..n1 {
        subjects.push(gen.generate_subject(format!("a{i}"), 1, t, rng).unwrap());
    }
    for i in 0..n2 {
        subjects.push(gen.generate_subject(format!("b{i}"), 2, t, rng).unwrap());
    }
    StudyDataset::new(subjects).unwrap()
}

#[test]
fn design_dimensions() {
    let gen = generator(2, 0.1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ds = dataset(&gen, 1, 1, 5, &mut rng);
    let d = build_design(&ds, 0, 1).unwrap();
    assert_eq!(d.n_obs(), 8);
    let x = d.fixed_design_dense();
    let z = d.random_design_dense();
    assert_eq!(x.shape(), (8, 4));
    assert_eq!(z.shape(), (8, 4));
    // subject blocks of Z are 4 x 2 and zero off their rows
    for row in 0..8 {
        let own = if row < 4 { 0..2 } else { 2..4 };
        for c in 0..4 {
            if !own.contains(&c) {
                assert_eq!(z[(row, c)], 0.0);
            }
        }
    }
}

#[test]
fn design_structure_from_generator() {
    let gen = generator(3, 0.1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ds = dataset(&gen, 3, 2, 30, &mut rng);
    let d = build_design(&ds, 1, 2).unwrap();
    let x = d.fixed_design_dense();
    let z = d.random_design_dense();
    let q = d.block_size();
    for s in &d.subjects {
        for row in s.rows.clone() {
            // exactly one group's block carries the regressors
            let active: Vec<usize> = (1..=2)
                .filter(|g| d.fixed_columns.iter().enumerate().any(|(c, l)| l.group == *g && x[(row, c)] != 0.0))
                .collect();
            assert_eq!(active, vec![s.group + 1]);
        }
    }
    // X restricted to group-1 rows equals the stacked Z blocks of group-1 subjects
    for (i, s) in d.subjects.iter().enumerate().filter(|(_, s)| s.group == 0) {
        for row in s.rows.clone() {
            for (c, l) in d.fixed_columns.iter().enumerate().filter(|(_, l)| l.group == 1) {
                assert_eq!(x[(row, c)], z[(row, i * q + l.regressor_index(3))]);
            }
        }
    }
    // responses follow the target channel
    let first = &ds.subjects()[0].series;
    assert_eq!(d.response[0], first.channel(1)[2]);
    assert_eq!(d.regressors[(0, 0)], first.channel(0)[1]);
    assert_eq!(d.regressors[(0, 3)], first.channel(0)[0]);
}

#[test]
fn design_errors() {
    let gen = generator(2, 0.1, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let only_group1 = dataset(&gen, 2, 0, 20, &mut rng);
    assert_eq!(build_design(&only_group1, 0, 1).unwrap_err(), mespec_core::Error::EmptyGroup(2));
    let ds = dataset(&gen, 1, 1, 20, &mut rng);
    assert!(matches!(build_design(&ds, 5, 1), Err(mespec_core::Error::DimensionMismatch(_))));
    assert!(matches!(build_design(&ds, 0, 10), Err(mespec_core::Error::TooShort { .. })));
}

/// Gaussian REML deviance of the fixed-effects regression, computed directly.
fn ols_reml_deviance(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let (n, k) = x.shape();
    let xtx = x.transpose() * x;
    let chol = xtx.clone().cholesky().unwrap();
    let beta = chol.solve(&(x.transpose() * y));
    let rss = (y - x * beta).norm_squared();
    let m = (n - k) as f64;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    logdet + m * (1.0 + (2.0 * std::f64::consts::PI * rss / m).ln())
}

#[test]
fn zero_theta_is_fixed_effects_regression() {
    let gen = generator(2, 0.2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ds = dataset(&gen, 3, 3, 60, &mut rng);
    let d = build_design(&ds, 0, 1).unwrap();
    let pd = ProfiledDeviance::new(&d).unwrap();
    let got = pd.deviance(&vec![0.0; pd.n_theta()], Objective::Reml).unwrap();
    let want = ols_reml_deviance(&d.fixed_design_dense(), &DVector::from_column_slice(&d.response));
    assert!((got - want).abs() < 1e-8, "{got} vs {want}");
}

#[test]
fn deviance_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for inst in 0..20 {
        let r = 1 + inst % 2;
        let gen = generator(r, 0.15, 100 + inst as u64);
        let n1 = 1 + inst % 2;
        let n2 = 1 + (inst / 2) % 2;
        let t = rng.random_range(20..=40);
        let ds = dataset(&gen, n1, n2, t, &mut rng);
        let d = build_design(&ds, 0, 1).unwrap();
        let pd = ProfiledDeviance::new(&d).unwrap();
        for _ in 0..10 {
            let theta: Vec<f64> = (0..pd.n_theta()).map(|_| rng.random_range(0.0..2.0)).collect();
            for obj in [Objective::Reml, Objective::Ml] {
                let fast = pd.deviance(&theta, obj).unwrap();
                let dense = dense_deviance(&d, &theta, obj);
                assert!((fast - dense.deviance).abs() < 1e-6, "{fast} vs {}", dense.deviance);
            }
            let sol = pd.solve(&theta).unwrap();
            let dense = dense_deviance(&d, &theta, Objective::Reml);
            for (a, b) in sol.beta.iter().zip(dense.beta.iter()) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn duplicated_subjects_leave_beta_unchanged() {
    let gen = generator(2, 0.2, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ds = dataset(&gen, 2, 2, 50, &mut rng);
    let mut doubled: Vec<SubjectRecord> = ds.subjects().to_vec();
    for s in ds.subjects() {
        doubled.push(SubjectRecord::new(format!("{}-copy", s.subject_id), s.group_index, s.series.clone()).unwrap());
    }
    let dd = StudyDataset::new(doubled).unwrap();
    let theta = vec![0.3, 0.1, 0.5, 0.2];
    let a = ProfiledDeviance::new(&build_design(&ds, 1, 1).unwrap()).unwrap().solve(&theta).unwrap();
    let b = ProfiledDeviance::new(&build_design(&dd, 1, 1).unwrap()).unwrap().solve(&theta).unwrap();
    for (x, y) in a.beta.iter().zip(&b.beta) {
        assert!((x - y).abs() < 1e-8);
    }
}

/// Coarse grid over the box, then steepest descent on the `step` lattice
/// through axis neighbors, all on the dense oracle.
fn lattice_search(design: &MixedDesign, dim: usize, step: f64) -> (Vec<f64>, f64) {
    let f = |t: &[f64]| dense_deviance(design, t, Objective::Reml).deviance;
    let coarse = 0.05;
    let n = 41;
    let mut best = (vec![0.0; dim], f64::INFINITY);
    let mut idx = vec![0usize; dim];
    loop {
        let t: Vec<f64> = idx.iter().map(|i| *i as f64 * coarse).collect();
        let v = f(&t);
        if v < best.1 {
            best = (t, v);
        }
        let mut d = 0;
        while d < dim {
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == dim {
            break;
        }
    }
    let mut lattice: Vec<i64> = best.0.iter().map(|v| (v / step).round() as i64).collect();
    let mut val = best.1;
    loop {
        let mut moved = false;
        for d in 0..dim {
            for dir in [-1i64, 1] {
                let mut cand = lattice.clone();
                cand[d] += dir;
                if cand[d] < 0 {
                    continue;
                }
                let t: Vec<f64> = cand.iter().map(|i| *i as f64 * step).collect();
                let v = f(&t);
                if v < val {
                    val = v;
                    lattice = cand;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    (lattice.iter().map(|i| *i as f64 * step).collect(), val)
}

#[test]
fn optimum_matches_oracle_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for inst in 0..4 {
        let gen = generator(1, 0.3, 200 + inst);
        let ds = dataset(&gen, 2, 2, 40, &mut rng);
        let d = build_design(&ds, 0, 1).unwrap();
        let fit = fit_reml(&d, &FitConfig::default()).unwrap();
        let (grid, gval) = lattice_search(&d, 2, 1e-3);
        let dense_at_fit = dense_deviance(&d, &fit.theta, Objective::Reml).deviance;
        assert!(dense_at_fit <= gval + 1e-6, "optimizer {dense_at_fit} worse than grid {gval}");
        for (a, b) in fit.theta.iter().zip(&grid) {
            assert!((a - b).abs() <= 1e-3 + 1e-9, "theta {:?} vs grid {:?}", fit.theta, grid);
        }
    }
}

#[test]
fn pure_fixed_effects_matches_classical_regression() {
    let gen = generator(2, 0.0, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ds = dataset(&gen, 4, 4, 80, &mut rng);
    let d = build_design(&ds, 0, 1).unwrap();
    let cfg = FitConfig {
        fixed_theta: Some(vec![0.0; 4]),
        ..Default::default()
    };
    let fit = fit_reml(&d, &cfg).unwrap();
    let tests = fixed_effect_inference(&fit).unwrap();

    let x = d.fixed_design_dense();
    let y = DVector::from_column_slice(&d.response);
    let (n, k) = x.shape();
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let beta = &xtx_inv * x.transpose() * &y;
    let s2 = (&y - &x * &beta).norm_squared() / (n - k) as f64;
    for (j, t) in tests.iter().enumerate() {
        let se = (s2 * xtx_inv[(j, j)]).sqrt();
        assert!((t.estimate - beta[j]).abs() < 1e-8);
        assert!((t.t - beta[j] / se).abs() < 1e-6);
        assert!((t.df - (n - k) as f64).abs() < 1e-6, "df {}", t.df);
        assert!(!t.normal_fallback);
    }
}

#[test]
fn satterthwaite_p_approaches_normal_for_large_samples() {
    let gen = generator(1, 0.0, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ds = dataset(&gen, 10, 10, 1000, &mut rng);
    let d = build_design(&ds, 0, 1).unwrap();
    let cfg = FitConfig {
        fixed_theta: Some(vec![0.0; 2]),
        ..Default::default()
    };
    let fit = fit_reml(&d, &cfg).unwrap();
    for t in fixed_effect_inference(&fit).unwrap() {
        let normal = mespec_core::stats::normal_two_sided(t.t);
        assert!((t.p - normal).abs() < 1e-3);
    }
}

#[test]
fn covariance_structure_and_gradient_at_optimum() {
    let gen = generator(2, 0.15, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ds = dataset(&gen, 5, 5, 150, &mut rng);
    let d = build_design(&ds, 1, 1).unwrap();
    let fit = fit_reml(&d, &FitConfig::default()).unwrap();
    let k = fit.beta.len();
    let cov = DMatrix::from_fn(k, k, |i, j| fit.beta_cov[i][j]);
    assert!((&cov - cov.transpose()).amax() < 1e-14);
    assert!(cov.clone().symmetric_eigenvalues().iter().all(|v| *v >= -1e-12));
    for (i, li) in fit.labels.iter().enumerate() {
        for (j, lj) in fit.labels.iter().enumerate() {
            if li.group != lj.group {
                assert!(fit.beta_cov[i][j].abs() < 1e-10);
            }
        }
    }
    assert!(fit.convergence.relative_gradient_norm <= 1e-3, "{:?}", fit.convergence);
    assert!(fit.vc_information.is_some());
}

#[test]
fn blups_vanish_with_theta() {
    let gen = generator(2, 0.2, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ds = dataset(&gen, 3, 3, 60, &mut rng);
    let d = build_design(&ds, 0, 1).unwrap();
    let pd = ProfiledDeviance::new(&d).unwrap();
    let mut last = f64::INFINITY;
    for scale in [1.0, 0.1, 0.01, 0.001] {
        let sol = pd.solve(&vec![scale; 4]).unwrap();
        let size = sol.blups.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(size < last);
        last = size;
    }
    assert!(last < 1e-3);
}

#[test]
fn blup_shrinkage_with_orthogonal_regressors() {
    // one subject per group with orthonormal regressors: the prediction is
    // the subject's OLS deviation from its group effect, shrunk toward zero
    let t = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut subjects = Vec::new();
    for (g, id) in [(1, "a"), (1, "b"), (2, "c"), (2, "d")] {
        let mut x: Vec<f64> = (0..t).map(|i| ((i * 7 % 13) as f64 - 6.0) + rng.random_range(-0.5..0.5)).collect();
        let mean = x.iter().sum::<f64>() / t as f64;
        x.iter_mut().for_each(|v| *v -= mean);
        let series = MultiChannelSeries::from_columns(vec![x], vec!["c".into()], 100.0).unwrap();
        subjects.push(SubjectRecord::new(id, g, series).unwrap());
    }
    let ds = StudyDataset::new(subjects).unwrap();
    let d = build_design(&ds, 0, 1).unwrap();
    let fit = fit_reml(&d, &FitConfig { fixed_theta: Some(vec![0.5, 0.8]), ..Default::default() }).unwrap();
    for (s, b) in d.subjects.iter().zip(&fit.blups) {
        let xs = d.regressors.view((s.rows.start, 0), (s.rows.len(), 1));
        let ys = &d.response[s.rows.clone()];
        let xx: f64 = xs.iter().map(|v| v * v).sum();
        let xy: f64 = xs.iter().zip(ys).map(|(a, b)| a * b).sum();
        let own = xy / xx;
        let dev = own - fit.beta[s.group];
        assert!(b.effects[0].abs() <= dev.abs() + 1e-8);
    }
}

#[test]
fn subject_order_does_not_matter() {
    let gen = generator(2, 0.2, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ds = dataset(&gen, 3, 3, 80, &mut rng);
    let mut rev: Vec<SubjectRecord> = ds.subjects().to_vec();
    rev.reverse();
    let dr = StudyDataset::new(rev).unwrap();
    let cfg = FitConfig::default();
    let a = fit_reml(&build_design(&ds, 0, 1).unwrap(), &cfg).unwrap();
    let b = fit_reml(&build_design(&dr, 0, 1).unwrap(), &cfg).unwrap();
    for (x, y) in a.beta.iter().zip(&b.beta) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
    // at a common theta the estimates agree to rounding
    let th = vec![0.2, 0.3, 0.1, 0.4];
    let sa = ProfiledDeviance::new(&build_design(&ds, 0, 1).unwrap()).unwrap().solve(&th).unwrap();
    let sb = ProfiledDeviance::new(&build_design(&dr, 0, 1).unwrap()).unwrap().solve(&th).unwrap();
    for (x, y) in sa.beta.iter().zip(&sb.beta) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn ml_exclusion_of_nothing_is_the_full_fit() {
    let gen = generator(2, 0.1, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let ds = dataset(&gen, 3, 3, 80, &mut rng);
    let d = build_design(&ds, 0, 1).unwrap();
    let nested = fit_ml_nested(&d, &[], &FitConfig::default()).unwrap();
    assert_eq!(nested.full.ml_deviance(), nested.reduced.ml_deviance());
    let bad = ColumnLabel { group: 3, source: 0, lag: 1 };
    assert!(fit_ml_nested(&d, &[bad], &FitConfig::default()).is_err());
}

#[test]
fn null_variance_recovery() {
    // tau = 0 in the generator: the Monte Carlo mean of every fitted SD stays
    // small and the fixed effects agree with the pooled least squares fit
    let gen = generator(2, 0.0, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let cfg = FitConfig {
        vc_information: false,
        ..Default::default()
    };
    let reps = 100;
    let mut tau_sum = vec![0.0; 4];
    for _ in 0..reps {
        let ds = dataset(&gen, 5, 5, 200, &mut rng);
        let d = build_design(&ds, 0, 1).unwrap();
        let fit = fit_reml(&d, &cfg).unwrap();
        for (acc, tau) in tau_sum.iter_mut().zip(fit.components.tau.iter().flatten()) {
            *acc += tau;
        }
        let ols = fit_reml(&d, &FitConfig { fixed_theta: Some(vec![0.0; 4]), ..cfg.clone() }).unwrap();
        for c in 0..fit.beta.len() {
            assert!((fit.beta[c] - ols.beta[c]).abs() <= 2.0 * ols.standard_error(c));
        }
    }
    for acc in tau_sum {
        assert!(acc / reps as f64 <= 0.05, "mean tau {}", acc / reps as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn joint_rescaling_leaves_beta_unchanged(seed in 0u64..1000, c in 0.1f64..10.0) {
        let gen = generator(2, 0.2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = dataset(&gen, 2, 2, 40, &mut rng);
        let scaled = ds.map_series(|rec| {
            let s = &rec.series;
            let cols = (0..s.n_channels()).map(|r| s.channel(r).iter().map(|v| v * c).collect()).collect();
            MultiChannelSeries::from_columns(cols, s.channel_names().to_vec(), s.sampling_rate_hz())
        }).unwrap();
        // sigma scales with c, so theta = tau / sigma scales with 1 / c
        let theta = vec![0.4, 0.2, 0.3, 0.6];
        let theta_c: Vec<f64> = theta.iter().map(|t| t / c).collect();
        let da = build_design(&ds, 0, 1).unwrap();
        let db = build_design(&scaled, 0, 1).unwrap();
        let a = ProfiledDeviance::new(&da).unwrap().solve(&theta).unwrap();
        let b = ProfiledDeviance::new(&db).unwrap().solve(&theta_c).unwrap();
        for (x, y) in a.beta.iter().zip(&b.beta) {
            prop_assert!((x - y).abs() < 1e-8);
        }
        let fa = fit_reml(&da, &FitConfig::default()).unwrap();
        let fb = fit_reml(&db, &FitConfig::default()).unwrap();
        for (x, y) in fa.beta.iter().zip(&fb.beta) {
            prop_assert!((x - y).abs() < 1e-5, "{} vs {}", x, y);
        }
        prop_assert!((fb.components.sigma / fa.components.sigma - c).abs() < 1e-5 * c);
    }

    #[test]
    fn deviance_is_finite_for_nonnegative_theta(seed in 0u64..1000, t0 in 0.0f64..5.0, t1 in 0.0f64..5.0) {
        let gen = generator(1, 0.2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = dataset(&gen, 2, 1, 30, &mut rng);
        let pd = ProfiledDeviance::new(&build_design(&ds, 0, 1).unwrap()).unwrap();
        prop_assert!(pd.deviance(&[t0, t1], Objective::Reml).unwrap().is_finite());
        prop_assert!(pd.deviance(&[-0.1, t1], Objective::Reml).is_err());
    }
}
