//! Mixed-effects VAR population generator and the Monte Carlo consistency
//! harness.
//!
//! Every replicate draws from its own ChaCha8 stream, selected by replicate
//! index from the configured seed, and every subject from a sub-stream of
//! its replicate. Streams do not depend on the time-length regime, so
//! replicate `i` of every regime shares its subject effects and the leading
//! part of its innovation sequences (common random numbers), and results do
//! not depend on how replicates are scheduled across threads.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mixed::{build_design, fit_reml, ColumnLabel, FitConfig};
use crate::series::{MultiChannelSeries, StudyDataset, SubjectRecord, GROUP_COUNT};
use crate::var::companion_spectral_radius;

pub const DEFAULT_BURN_IN: usize = 500;
pub const MAX_CAUSAL_RESAMPLES: usize = 100;
/// Fraction of off-diagonal generator entries set to zero.
pub const OFF_DIAGONAL_SPARSITY: f64 = 0.7;
/// SD of lag-2 generator entries relative to lag-1 entries, before the
/// common rescaling to the target radius.
pub const DEFAULT_LAG2_SCALE: f64 = 0.02;
/// Share of failed fits above which a run is aborted.
pub const MAX_FAILURE_SHARE: f64 = 0.1;

/// Simulates `x(t) = sum_k A_k x(t - k) + e(t)`, `e ~ N(0, noise_sd^2 I)`,
/// from a zero start, returning the `t_len x R` samples after `burn_in`.
///
/// The innovations of the returned segment are drawn first and the burn-in
/// innovations after them, so a longer record extends a shorter one drawn
/// from the same stream, and the burn-in length leaves the returned
/// segment's innovations untouched.
pub fn simulate_var<G: Rng + ?Sized>(coeffs: &[DMatrix<f64>], noise_sd: f64, t_len: usize, burn_in: usize, rng: &mut G) -> DMatrix<f64> {
    let r = coeffs[0].nrows();
    let p = coeffs.len();
    let total = t_len + burn_in;
    let mut noise: Vec<f64> = (0..total * r)
        .map(|_| noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    // kept innovations move behind the burn-in ones in time order
    noise.rotate_right(burn_in * r);
    let mut x = DMatrix::zeros(total, r);
    for t in 0..total {
        for i in 0..r {
            let mut acc = noise[t * r + i];
            for (k, a) in coeffs.iter().enumerate().take(p.min(t)) {
                let lagged = t - k - 1;
                for j in 0..r {
                    acc += a[(i, j)] * x[(lagged, j)];
                }
            }
            x[(t, i)] = acc;
        }
    }
    x.rows(burn_in, t_len).into_owned()
}

/// Random-effect SD for one lag: common to all entries or per entry.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(untagged))]
pub enum EffectSd {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl EffectSd {
    pub fn at(&self, target: usize, source: usize) -> f64 {
        match self {
            EffectSd::Scalar(v) => *v,
            EffectSd::Matrix(m) => m[target][source],
        }
    }

    fn validate(&self, r: usize) -> Result<()> {
        let ok = match self {
            EffectSd::Scalar(v) => *v >= 0.0 && v.is_finite(),
            EffectSd::Matrix(m) => {
                m.len() == r && m.iter().all(|row| row.len() == r && row.iter().all(|v| *v >= 0.0 && v.is_finite()))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("random-effect SDs must be non-negative, scalar or {r}x{r}")))
        }
    }
}

/// A coefficient added on top of the shared generator for one group only.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantedCoefficient {
    /// 1-based.
    pub group: usize,
    /// 1-based.
    pub lag: usize,
    pub target: usize,
    pub source: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SimulationConfig {
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(default = "defaults::channels"))]
    pub channels: usize,
    #[cfg_attr(feature = "serde", serde(default = "defaults::subjects_per_group"))]
    pub subjects_per_group: usize,
    #[cfg_attr(feature = "serde", serde(default = "defaults::generator_lag"))]
    pub generator_lag: usize,
    /// Generator matrices, `[lag][target][source]`. Drawn with
    /// [`generator_matrices`] when absent.
    #[cfg_attr(feature = "serde", serde(default))]
    pub phi: Option<Vec<Vec<Vec<f64>>>>,
    #[cfg_attr(feature = "serde", serde(default = "defaults::target_radius"))]
    pub target_radius: f64,
    #[cfg_attr(feature = "serde", serde(default = "defaults::lag2_scale"))]
    pub lag2_scale: f64,
    /// One entry per generator lag.
    #[cfg_attr(feature = "serde", serde(default = "defaults::random_effect_sd"))]
    pub random_effect_sd: Vec<EffectSd>,
    #[cfg_attr(feature = "serde", serde(default = "defaults::noise_sd"))]
    pub noise_sd: f64,
    #[cfg_attr(feature = "serde", serde(default = "defaults::time_points"))]
    pub time_points: Vec<usize>,
    #[cfg_attr(feature = "serde", serde(default = "defaults::replicates"))]
    pub replicates: usize,
    #[cfg_attr(feature = "serde", serde(default = "defaults::fit_lag"))]
    pub fit_lag: usize,
    #[cfg_attr(feature = "serde", serde(default = "defaults::burn_in"))]
    pub burn_in: usize,
    #[cfg_attr(feature = "serde", serde(default = "defaults::sampling_rate_hz"))]
    pub sampling_rate_hz: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub planted: Vec<PlantedCoefficient>,
}

mod defaults {
    use super::EffectSd;

    pub fn channels() -> usize {
        10
    }
    pub fn subjects_per_group() -> usize {
        5
    }
    pub fn generator_lag() -> usize {
        2
    }
    pub fn target_radius() -> f64 {
        0.8
    }
    pub fn lag2_scale() -> f64 {
        super::DEFAULT_LAG2_SCALE
    }
    pub fn random_effect_sd() -> Vec<EffectSd> {
        vec![EffectSd::Scalar(0.02), EffectSd::Scalar(0.02)]
    }
    pub fn noise_sd() -> f64 {
        1.0
    }
    pub fn time_points() -> Vec<usize> {
        vec![200, 500, 700]
    }
    pub fn replicates() -> usize {
        200
    }
    pub fn fit_lag() -> usize {
        1
    }
    pub fn burn_in() -> usize {
        super::DEFAULT_BURN_IN
    }
    pub fn sampling_rate_hz() -> f64 {
        128.0
    }
}

impl SimulationConfig {
    /// Default generator and study layout with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            channels: defaults::channels(),
            subjects_per_group: defaults::subjects_per_group(),
            generator_lag: defaults::generator_lag(),
            phi: None,
            target_radius: defaults::target_radius(),
            lag2_scale: defaults::lag2_scale(),
            random_effect_sd: defaults::random_effect_sd(),
            noise_sd: defaults::noise_sd(),
            time_points: defaults::time_points(),
            replicates: defaults::replicates(),
            fit_lag: defaults::fit_lag(),
            burn_in: defaults::burn_in(),
            sampling_rate_hz: defaults::sampling_rate_hz(),
            planted: Vec::new(),
        }
    }

    /// Validates the configuration and fixes the generator matrices.
    pub fn resolve(&self) -> Result<Generator> {
        let r = self.channels;
        if r == 0 || self.subjects_per_group == 0 || self.generator_lag == 0 || self.fit_lag == 0 {
            return Err(Error::invalid("channels, subjects, generator lag and fit lag must be positive"));
        }
        if !(self.noise_sd > 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::invalid("noise SD must be positive"));
        }
        if self.random_effect_sd.len() != self.generator_lag {
            return Err(Error::invalid(format!(
                "{} random-effect SDs for generator lag {}",
                self.random_effect_sd.len(),
                self.generator_lag
            )));
        }
        for sd in &self.random_effect_sd {
            sd.validate(r)?;
        }
        let phi = match &self.phi {
            Some(m) => {
                if m.len() != self.generator_lag || m.iter().any(|a| a.len() != r || a.iter().any(|row| row.len() != r)) {
                    return Err(Error::DimensionMismatch(format!(
                        "generator matrices must be {} matrices of size {r}x{r}",
                        self.generator_lag
                    )));
                }
                m.iter()
                    .map(|a| DMatrix::from_fn(r, r, |i, j| a[i][j]))
                    .collect::<Vec<_>>()
            }
            None => {
                if !(self.target_radius > 0.0 && self.target_radius < 1.0) {
                    return Err(Error::invalid("target radius must lie in (0, 1)"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(u64::MAX);
                generator_matrices(r, self.generator_lag, self.target_radius, self.lag2_scale, &mut rng)
            }
        };
        let mut groups = vec![phi.clone(); GROUP_COUNT];
        for pc in &self.planted {
            if pc.group == 0 || pc.group > GROUP_COUNT || pc.lag == 0 || pc.lag > self.generator_lag || pc.target >= r || pc.source >= r {
                return Err(Error::invalid(format!("planted coefficient out of range: {pc:?}")));
            }
            groups[pc.group - 1][pc.lag - 1][(pc.target, pc.source)] += pc.value;
        }
        for (g, m) in groups.iter().enumerate() {
            let rho = companion_spectral_radius(m)?;
            if !(rho < 1.0) {
                return Err(Error::invalid(format!(
                    "group {} generator is not causal (companion radius {rho:.6})",
                    g + 1
                )));
            }
        }
        Ok(Generator {
            config: self.clone(),
            group_phi: groups,
        })
    }
}

/// Draws lag matrices with `N(0, 1)` lag-1 entries and `N(0, lag2_scale^2)`
/// entries at higher lags, zeroes [`OFF_DIAGONAL_SPARSITY`] of each matrix's
/// off-diagonal entries, then scales all matrices by one common factor so
/// the companion spectral radius equals `target_radius` to within `1e-6`.
pub fn generator_matrices<G: Rng + ?Sized>(r: usize, lags: usize, target_radius: f64, lag2_scale: f64, rng: &mut G) -> Vec<DMatrix<f64>> {
    let off: Vec<(usize, usize)> = (0..r).flat_map(|i| (0..r).filter(move |j| *j != i).map(move |j| (i, j))).collect();
    let n_zero = (OFF_DIAGONAL_SPARSITY * off.len() as f64).round() as usize;
    let mut base = Vec::with_capacity(lags);
    for k in 0..lags {
        let sd = if k == 0 { 1.0 } else { lag2_scale };
        let mut a = DMatrix::from_fn(r, r, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        for idx in sample(rng, off.len(), n_zero) {
            let (i, j) = off[idx];
            a[(i, j)] = 0.0;
        }
        base.push(a);
    }
    let radius = |s: f64| {
        let scaled: Vec<_> = base.iter().map(|a| a * s).collect();
        companion_spectral_radius(&scaled).expect("square matrices")
    };
    let mut hi = 1.0;
    while radius(hi) < target_radius {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if radius(mid) < target_radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    base.iter().map(|a| a * s).collect()
}

/// The two-lag generator at the default relative lag-2 scale.
pub fn default_generator_matrices<G: Rng + ?Sized>(r: usize, target_radius: f64, rng: &mut G) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut m = generator_matrices(r, 2, target_radius, DEFAULT_LAG2_SCALE, rng);
    let phi2 = m.pop().expect("two lags");
    let phi1 = m.pop().expect("two lags");
    (phi1, phi2)
}

/// A validated configuration with fixed group generator matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: SimulationConfig,
    /// `group_phi[g][k]`: lag-`k + 1` matrix of group `g + 1`.
    pub group_phi: Vec<Vec<DMatrix<f64>>>,
}

impl Generator {
    pub fn channel_names(&self) -> Vec<String> {
        (1..=self.config.channels).map(|i| format!("ch{i}")).collect()
    }

    /// Group matrices plus one realization of subject random effects,
    /// redrawn until the subject's process is causal.
    pub fn subject_matrices<G: Rng + ?Sized>(&self, group: usize, rng: &mut G) -> Result<Vec<DMatrix<f64>>> {
        let r = self.config.channels;
        let base = &self.group_phi[group - 1];
        for _ in 0..MAX_CAUSAL_RESAMPLES {
            let m: Vec<DMatrix<f64>> = base
                .iter()
                .zip(&self.config.random_effect_sd)
                .map(|(a, sd)| {
                    DMatrix::from_fn(r, r, |i, j| {
                        let s = sd.at(i, j);
                        let z: f64 = rng.sample(StandardNormal);
                        a[(i, j)] + s * z
                    })
                })
                .collect();
            if companion_spectral_radius(&m)? < 1.0 {
                return Ok(m);
            }
        }
        Err(Error::invalid(format!(
            "no causal subject process in {MAX_CAUSAL_RESAMPLES} random-effect draws"
        )))
    }

    pub fn generate_subject<G: Rng + ?Sized>(&self, id: impl Into<String>, group: usize, t_len: usize, rng: &mut G) -> Result<SubjectRecord> {
        if group == 0 || group > GROUP_COUNT {
            return Err(Error::invalid(format!("group {group} out of range")));
        }
        let m = self.subject_matrices(group, rng)?;
        let x = simulate_var(&m, self.config.noise_sd, t_len, self.config.burn_in, rng);
        let series = MultiChannelSeries::new(x, self.channel_names(), self.config.sampling_rate_hz)?;
        SubjectRecord::new(id, group, series)
    }

    /// One study: `subjects_per_group` subjects in each group, group 1
    /// first. Each subject draws from its own stream seeded from `rng`, so
    /// subject effects do not depend on `t_len`.
    pub fn generate_population<G: Rng + ?Sized>(&self, t_len: usize, rng: &mut G) -> Result<StudyDataset> {
        let n = self.config.subjects_per_group;
        let seeds: Vec<u64> = (0..GROUP_COUNT * n).map(|_| rng.random()).collect();
        let mut subjects = Vec::with_capacity(seeds.len());
        for g in 1..=GROUP_COUNT {
            for i in 0..n {
                let mut sub = ChaCha8Rng::seed_from_u64(seeds[(g - 1) * n + i]);
                subjects.push(self.generate_subject(format!("g{g}s{}", i + 1), g, t_len, &mut sub)?);
            }
        }
        StudyDataset::new(subjects)
    }

    /// The generator stream of replicate `index`.
    pub fn replicate_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index as u64);
        rng
    }
}

/// Entrywise `R x R` summaries over successful replicates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorSummary {
    pub truth: Vec<Vec<f64>>,
    pub mean: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    pub mse: Vec<Vec<f64>>,
    /// Replicate standard deviation with denominator `n`, so that
    /// `mse = bias^2 + sd^2`.
    pub sd: Vec<Vec<f64>>,
    pub mean_mse: f64,
    pub mean_abs_bias: f64,
    pub mean_sd: f64,
}

impl ErrorSummary {
    fn from_samples(truth: &DMatrix<f64>, samples: &[DMatrix<f64>]) -> Self {
        let (r, c) = truth.shape();
        let n = samples.len() as f64;
        let to_rows = |m: &DMatrix<f64>| (0..r).map(|i| (0..c).map(|j| m[(i, j)]).collect()).collect();
        let mut mean = DMatrix::zeros(r, c);
        for s in samples {
            mean += s;
        }
        mean /= n;
        let mut mse = DMatrix::zeros(r, c);
        let mut var = DMatrix::zeros(r, c);
        for s in samples {
            mse += (s - truth).map(|v| v * v);
            var += (s - &mean).map(|v| v * v);
        }
        mse /= n;
        var /= n;
        let bias = &mean - truth;
        let sd = var.map(f64::sqrt);
        let cells = (r * c) as f64;
        Self {
            truth: to_rows(truth),
            mean: to_rows(&mean),
            bias: to_rows(&bias),
            mse: to_rows(&mse),
            sd: to_rows(&sd),
            mean_mse: mse.sum() / cells,
            mean_abs_bias: bias.abs().sum() / cells,
            mean_sd: sd.sum() / cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegimeReport {
    pub time_points: usize,
    pub replicates: usize,
    pub failures: usize,
    /// Group-1 lag-1 fixed effects.
    pub phi: ErrorSummary,
    /// Group-1 lag-1 random-effect SDs.
    pub tau: ErrorSummary,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimulationReport {
    pub config: SimulationConfig,
    /// Generator matrices of group 1, `[lag][target][source]`.
    pub generator: Vec<Vec<Vec<f64>>>,
    pub regimes: Vec<RegimeReport>,
}

/// Group-1 lag-1 estimates from one replicate: `(phi, tau)`.
pub type ReplicateEstimate = (DMatrix<f64>, DMatrix<f64>);

/// Fits one replicate population, one target channel at a time.
pub fn fit_replicate(generator: &Generator, t_len: usize, index: usize) -> Result<ReplicateEstimate> {
    let mut rng = generator.replicate_rng(index);
    let data = generator.generate_population(t_len, &mut rng)?;
    let r = generator.config.channels;
    let cfg = FitConfig {
        vc_information: false,
        ..Default::default()
    };
    let mut phi = DMatrix::zeros(r, r);
    let mut tau = DMatrix::zeros(r, r);
    for target in 0..r {
        let design = build_design(&data, target, generator.config.fit_lag)?;
        let fit = fit_reml(&design, &cfg)?;
        for source in 0..r {
            let label = ColumnLabel { group: 1, source, lag: 1 };
            phi[(target, source)] = fit.coefficient(&label).expect("lag-1 column present");
            tau[(target, source)] = fit.components.tau[0][label.regressor_index(r)];
        }
    }
    Ok((phi, tau))
}

#[cfg(feature = "parallel")]
fn map_replicates<F>(n: usize, f: F) -> Vec<Result<ReplicateEstimate>>
where
    F: Fn(usize) -> Result<ReplicateEstimate> + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_replicates<F>(n: usize, f: F) -> Vec<Result<ReplicateEstimate>>
where
    F: Fn(usize) -> Result<ReplicateEstimate>,
{
    (0..n).map(f).collect()
}

/// Runs every regime and summarizes estimation error against the group-1
/// generator.
///
/// Replicates whose fit fails numerically are counted and excluded; input
/// errors (for example an unattainable causal draw) abort the run, as does a
/// failure share above [`MAX_FAILURE_SHARE`].
pub fn run_replicates(config: &SimulationConfig) -> Result<SimulationReport> {
    let generator = config.resolve()?;
    run_with_generator(&generator)
}

pub fn run_with_generator(generator: &Generator) -> Result<SimulationReport> {
    let config = &generator.config;
    if config.replicates == 0 || config.time_points.is_empty() {
        return Err(Error::invalid("need at least one replicate and one regime"));
    }
    let r = config.channels;
    let phi_truth = generator.group_phi[0][0].clone();
    let tau_truth = DMatrix::from_fn(r, r, |i, j| config.random_effect_sd[0].at(i, j));
    let mut regimes = Vec::with_capacity(config.time_points.len());
    for &t_len in &config.time_points {
        let results = map_replicates(config.replicates, |i| fit_replicate(generator, t_len, i));
        let mut phis = Vec::with_capacity(results.len());
        let mut taus = Vec::with_capacity(results.len());
        let mut failures = 0;
        for res in results {
            match res {
                Ok((p, t)) => {
                    phis.push(p);
                    taus.push(t);
                }
                Err(e) if e.is_numerical() => failures += 1,
                Err(e) => return Err(e),
            }
        }
        if failures as f64 > MAX_FAILURE_SHARE * config.replicates as f64 || phis.is_empty() {
            return Err(Error::Numerical(format!(
                "{failures} of {} replicates failed to fit at T = {t_len}",
                config.replicates
            )));
        }
        regimes.push(RegimeReport {
            time_points: t_len,
            replicates: phis.len(),
            failures,
            phi: ErrorSummary::from_samples(&phi_truth, &phis),
            tau: ErrorSummary::from_samples(&tau_truth, &taus),
        });
    }
    let generator_rows = generator.group_phi[0]
        .iter()
        .map(|a| (0..r).map(|i| (0..r).map(|j| a[(i, j)]).collect()).collect())
        .collect();
    Ok(SimulationReport {
        config: config.clone(),
        generator: generator_rows,
        regimes,
    })
}
