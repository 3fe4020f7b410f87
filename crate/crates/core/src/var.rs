//! Per-subject vector autoregressions.
//!
//! Regressions carry no intercept: inputs are z-scored upstream. Lagged
//! regressor columns are ordered lag-major, column `(k - 1) * R + r'` holding
//! channel `r'` at lag `k`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::series::{MultiChannelSeries, StudyDataset};

/// Default LASSO coordinate-descent limits.
pub const LASSO_TOLERANCE: f64 = 1e-7;
pub const LASSO_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VarFit {
    pub lag_order: usize,
    /// `coefficients[k - 1][(r, r')]` is the effect of channel `r'` at lag `k`
    /// on channel `r`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    /// `E'E / T_eff`.
    pub residual_covariance: Vec<Vec<f64>>,
    pub residual_variances: Vec<f64>,
    pub t_effective: usize,
    /// Freely estimated coefficients (support size for LASSO fits).
    pub n_params: usize,
}

impl VarFit {
    pub fn n_channels(&self) -> usize {
        self.residual_variances.len()
    }

    pub fn coefficient_matrix(&self, lag: usize) -> DMatrix<f64> {
        let r = self.n_channels();
        let m = &self.coefficients[lag - 1];
        DMatrix::from_fn(r, r, |i, j| m[i][j])
    }

    pub fn coefficient_matrices(&self) -> Vec<DMatrix<f64>> {
        (1..=self.lag_order).map(|k| self.coefficient_matrix(k)).collect()
    }
}

/// Lagged design: `(X, Y)` with `T - p` rows; `X` is `(T - p) x (R p)`.
pub fn lagged_design(series: &MultiChannelSeries, p: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let t = series.len();
    let r = series.n_channels();
    if p == 0 {
        return Err(Error::invalid("lag order must be positive"));
    }
    if t <= r * p + 1 {
        return Err(Error::TooShort {
            len: t,
            required: r * p + 1,
        });
    }
    let n = t - p;
    let x = DMatrix::from_fn(n, r * p, |i, c| {
        let (k, src) = (c / r + 1, c % r);
        series.channel(src)[i + p - k]
    });
    let y = DMatrix::from_fn(n, r, |i, c| series.channel(c)[i + p]);
    Ok((x, y))
}

fn assemble(series: &MultiChannelSeries, p: usize, x: &DMatrix<f64>, y: &DMatrix<f64>, b: &DMatrix<f64>, n_params: usize) -> VarFit {
    // b is (R p) x R, column = equation
    let r = series.n_channels();
    let resid = y - x * b;
    let n = y.nrows();
    let cov = resid.transpose() * &resid / n as f64;
    let coefficients = (0..p)
        .map(|k| {
            (0..r)
                .map(|target| (0..r).map(|src| b[(k * r + src, target)]).collect())
                .collect()
        })
        .collect();
    VarFit {
        lag_order: p,
        coefficients,
        residual_variances: (0..r).map(|i| cov[(i, i)]).collect(),
        residual_covariance: (0..r).map(|i| (0..r).map(|j| cov[(i, j)]).collect()).collect(),
        t_effective: n,
        n_params,
    }
}

/// Least squares on an explicit design via QR; rejects numerically
/// rank-deficient regressors.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qr = x.clone().qr();
    let rmat = qr.r();
    let diag_max = rmat.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cols = x.ncols();
    for i in 0..cols {
        if rmat[(i, i)].abs() <= 1e-10 * diag_max.max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficient(format!("regressor column {i} is collinear with earlier columns")));
        }
    }
    let qty = qr.q().transpose() * y;
    rmat.solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))
}

/// Equation-by-equation least squares VAR(p) without intercept.
pub fn fit_var_ols(series: &MultiChannelSeries, p: usize) -> Result<VarFit> {
    let (x, y) = lagged_design(series, p)?;
    let b = least_squares(&x, &y)?;
    let r = series.n_channels();
    Ok(assemble(series, p, &x, &y, &b, p * r * r))
}

/// Penalty choice for the LASSO stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LassoPenalty {
    Fixed(f64),
    /// Contiguous-block cross-validation, per equation.
    CrossValidated { folds: usize },
}

impl Default for LassoPenalty {
    fn default() -> Self {
        LassoPenalty::CrossValidated { folds: 5 }
    }
}

/// Coordinate descent for `(1 / 2n) ||y - X b||^2 + lambda ||b||_1` on
/// columns rescaled to unit mean square. Returns coefficients on the original
/// scale.
pub fn lasso_coordinate_descent(x: &DMatrix<f64>, y: &[f64], lambda: f64, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let (n, m) = x.shape();
    let nf = n as f64;
    let (scale, cols) = unit_mean_square_columns(x);
    let mut beta = vec![0.0; m];
    let mut resid = y.to_vec();
    let soft = |z: f64| {
        if z > lambda {
            z - lambda
        } else if z < -lambda {
            z + lambda
        } else {
            0.0
        }
    };
    for _ in 0..max_iter {
        let mut max_change: f64 = 0.0;
        for j in 0..m {
            if scale[j] == 0.0 {
                continue;
            }
            let col = &cols[j];
            let rho = col.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / nf + beta[j];
            let new = soft(rho);
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, c) in resid.iter_mut().zip(col) {
                    *r -= delta * c;
                }
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tol {
            return Ok(beta
                .iter()
                .zip(&scale)
                .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
                .collect());
        }
    }
    Err(Error::NoConvergence { evaluations: max_iter })
}

/// Columns rescaled to unit mean square, with the scales; all-zero columns
/// keep scale 0 and are left untouched.
fn unit_mean_square_columns(x: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = x.nrows() as f64;
    let scale: Vec<f64> = (0..x.ncols())
        .map(|j| (x.column(j).iter().map(|v| v * v).sum::<f64>() / n).sqrt())
        .collect();
    let cols = (0..x.ncols())
        .map(|j| {
            let s = if scale[j] > 0.0 { scale[j] } else { 1.0 };
            x.column(j).iter().map(|v| v / s).collect()
        })
        .collect();
    (scale, cols)
}

/// Smallest penalty at which every standardized LASSO coefficient is zero.
/// Computed with the same arithmetic as the first coordinate-descent sweep,
/// so passing it back as the penalty yields exactly zero.
pub fn lasso_lambda_max(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = x.nrows() as f64;
    let (scale, cols) = unit_mean_square_columns(x);
    cols.iter()
        .zip(&scale)
        .filter(|(_, s)| **s > 0.0)
        .map(|(c, _)| (c.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n).abs())
        .fold(0.0, f64::max)
}

/// LASSO selection followed by a least-squares refit on the support.
fn lassle_equation(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let m = x.ncols();
    let lasso = lasso_coordinate_descent(x, y, lambda, LASSO_TOLERANCE, LASSO_MAX_ITERATIONS)?;
    let support: Vec<usize> = (0..m).filter(|&j| lasso[j] != 0.0).collect();
    let mut beta = vec![0.0; m];
    if support.is_empty() {
        return Ok(beta);
    }
    let xs = x.select_columns(support.iter());
    let ys = DMatrix::from_column_slice(y.len(), 1, y);
    let b = least_squares(&xs, &ys)?;
    for (i, &j) in support.iter().enumerate() {
        beta[j] = b[(i, 0)];
    }
    Ok(beta)
}

/// Contiguous-block cross-validation over a log-spaced penalty grid with the
/// one-standard-error rule: the largest penalty whose mean held-out error is
/// within one standard error of the best.
fn cv_lambda(x: &DMatrix<f64>, y: &[f64], folds: usize) -> Result<f64> {
    const GRID: usize = 30;
    const RATIO: f64 = 1e-3;
    let n = x.nrows();
    let folds = folds.clamp(2, n / 2);
    let lmax = lasso_lambda_max(x, y);
    if lmax == 0.0 {
        return Ok(0.0);
    }
    let grid: Vec<f64> = (0..GRID)
        .map(|i| lmax * RATIO.powf(i as f64 / (GRID - 1) as f64))
        .collect();
    // err[g][f]: mean squared held-out error of grid point g on fold f
    let mut err = vec![vec![0.0; folds]; GRID];
    for f in 0..folds {
        let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
        let train: Vec<usize> = (0..n).filter(|i| *i < lo || *i >= hi).collect();
        let xt = x.select_rows(train.iter());
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        for (g, &lambda) in grid.iter().enumerate() {
            // a fold whose refit is degenerate simply scores worst
            let beta = match lassle_equation(&xt, &yt, lambda) {
                Ok(b) => b,
                Err(_) => {
                    err[g][f] = f64::INFINITY;
                    continue;
                }
            };
            let sse: f64 = (lo..hi)
                .map(|i| {
                    let pred: f64 = (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum();
                    (y[i] - pred).powi(2)
                })
                .sum();
            err[g][f] = sse / (hi - lo) as f64;
        }
    }
    let k = folds as f64;
    let mean: Vec<f64> = err.iter().map(|e| e.iter().sum::<f64>() / k).collect();
    let best = (0..GRID).min_by(|a, b| mean[*a].total_cmp(&mean[*b])).unwrap_or(0);
    let m = mean[best];
    let se = (err[best].iter().map(|e| (e - m).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt();
    // the grid runs from large to small penalties
    let chosen = (0..=best).find(|&g| mean[g] <= m + se).unwrap_or(best);
    Ok(grid[chosen])
}

/// LASSO + least-squares refit ("LASSLE") VAR(p).
pub fn fit_var_lassle(series: &MultiChannelSeries, p: usize, penalty: LassoPenalty) -> Result<VarFit> {
    if let LassoPenalty::Fixed(l) = penalty {
        if !(l >= 0.0) {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {l}")));
        }
    }
    let (x, y) = lagged_design(series, p)?;
    let r = series.n_channels();
    let mut b = DMatrix::zeros(r * p, r);
    let mut support = 0;
    for eq in 0..r {
        let ye: Vec<f64> = y.column(eq).iter().copied().collect();
        let lambda = match penalty {
            LassoPenalty::Fixed(l) => l,
            LassoPenalty::CrossValidated { folds } => cv_lambda(&x, &ye, folds)?,
        };
        let beta = lassle_equation(&x, &ye, lambda)?;
        support += beta.iter().filter(|v| **v != 0.0).count();
        b.set_column(eq, &DVector::from_vec(beta));
    }
    Ok(assemble(series, p, &x, &y, &b, support))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InformationCriteria {
    pub aic: f64,
    pub bic: f64,
    pub hq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Criterion {
    Aic,
    Bic,
    Hq,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Aic, Criterion::Bic, Criterion::Hq];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
            Criterion::Hq => "hq",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

impl InformationCriteria {
    pub fn get(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
            Criterion::Hq => self.hq,
        }
    }
}

/// AIC, BIC and HQ from `ln det(E'E / T_eff)` and the free parameter count.
pub fn information_criteria(fit: &VarFit) -> Result<InformationCriteria> {
    let r = fit.n_channels();
    let cov = DMatrix::from_fn(r, r, |i, j| fit.residual_covariance[i][j]);
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Singular { block: "residual covariance".into() })?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let t = fit.t_effective as f64;
    let k = fit.n_params as f64;
    Ok(InformationCriteria {
        aic: logdet + 2.0 * k / t,
        bic: logdet + k * t.ln() / t,
        hq: logdet + 2.0 * k * t.ln().ln() / t,
    })
}

/// Estimator used for lag selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LagEstimator {
    Ols,
    Lassle(LassoPenalty),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectLagRow {
    pub subject_id: String,
    /// `criteria[p - 1]` for `p = 1..=p_max`.
    pub criteria: std::result::Result<Vec<InformationCriteria>, String>,
}

impl SubjectLagRow {
    /// argmin over `p` of the chosen criterion (1-based).
    pub fn selected(&self, c: Criterion) -> Option<usize> {
        let ics = self.criteria.as_ref().ok()?;
        ics.iter()
            .enumerate()
            .min_by(|a, b| a.1.get(c).total_cmp(&b.1.get(c)))
            .map(|(i, _)| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagSelectionReport {
    pub p_max: usize,
    pub criterion: Criterion,
    pub rows: Vec<SubjectLagRow>,
}

impl LagSelectionReport {
    /// Most frequent selection across subjects (smallest lag wins ties).
    pub fn modal(&self, c: Criterion) -> Option<usize> {
        let mut counts = vec![0usize; self.p_max + 1];
        for row in &self.rows {
            if let Some(p) = row.selected(c) {
                counts[p] += 1;
            }
        }
        let best = (1..=self.p_max).max_by(|a, b| counts[*a].cmp(&counts[*b]).then(b.cmp(a)))?;
        (counts[best] > 0).then_some(best)
    }

    pub fn selected_modal(&self) -> Option<usize> {
        self.modal(self.criterion)
    }
}

/// Information criteria for `p = 1..=p_max` of one series.
pub fn criteria_table(series: &MultiChannelSeries, p_max: usize, estimator: LagEstimator) -> Result<Vec<InformationCriteria>> {
    (1..=p_max)
        .map(|p| {
            let fit = match estimator {
                LagEstimator::Ols => fit_var_ols(series, p)?,
                LagEstimator::Lassle(pen) => fit_var_lassle(series, p, pen)?,
            };
            information_criteria(&fit)
        })
        .collect()
}

/// Per-subject lag selection; a failing subject is recorded, not fatal.
pub fn select_lag(dataset: &StudyDataset, p_max: usize, criterion: Criterion, estimator: LagEstimator) -> Result<LagSelectionReport> {
    if p_max == 0 {
        return Err(Error::invalid("p_max must be positive"));
    }
    let rows = dataset
        .subjects()
        .iter()
        .map(|s| SubjectLagRow {
            subject_id: s.subject_id.clone(),
            criteria: criteria_table(&s.series, p_max, estimator).map_err(|e| e.to_string()),
        })
        .collect();
    Ok(LagSelectionReport { p_max, criterion, rows })
}

/// `pR x pR` companion matrix of a VAR(p).
pub fn companion_matrix(coeffs: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = coeffs
        .first()
        .ok_or_else(|| Error::invalid("no coefficient matrices"))?;
    let r = first.nrows();
    if coeffs.iter().any(|m| m.shape() != (r, r)) {
        return Err(Error::DimensionMismatch("coefficient matrices must be square and equal-sized".into()));
    }
    let p = coeffs.len();
    let mut c = DMatrix::zeros(r * p, r * p);
    for (k, m) in coeffs.iter().enumerate() {
        c.view_mut((0, k * r), (r, r)).copy_from(m);
    }
    for i in r..r * p {
        c[(i, i - r)] = 1.0;
    }
    Ok(c)
}

/// Spectral radius of the companion matrix; the process is causal iff < 1.
pub fn companion_spectral_radius(coeffs: &[DMatrix<f64>]) -> Result<f64> {
    let c = companion_matrix(coeffs)?;
    Ok(c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}
