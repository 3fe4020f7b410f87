use crate::error::{Error, Result};
use crate::linalg;
use crate::mixed::deviance::{DevianceTerms, Objective, ProfiledDeviance};
use crate::mixed::design::{ColumnLabel, MixedDesign};
use crate::optim::{minimize_bounded, NelderMeadConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Each start sets every `theta` component to this value.
    pub starts: Vec<f64>,
    /// Evaluation budget per start is this times `dim(theta)`.
    pub evaluations_per_dim: usize,
    /// Final convergence tolerances: deviance spread and simplex size.
    pub f_tol: f64,
    pub x_tol: f64,
    /// Looser tolerances for the multi-start screening runs. The best start
    /// is then refined to `f_tol`/`x_tol`.
    pub screening_f_tol: f64,
    pub screening_x_tol: f64,
    /// Initial simplex of the refinement run: edge `polish_step * |theta_j|`,
    /// at least `polish_min_step`.
    pub polish_step: f64,
    pub polish_min_step: f64,
    /// Skip optimization and evaluate at this `theta`.
    pub fixed_theta: Option<Vec<f64>>,
    /// Finite-difference Hessian of the deviance for the variance-component
    /// covariance. Only REML fits use it.
    pub vc_information: bool,
    pub fd_relative_step: f64,
    /// Relative gradient norm above which an interior optimum is flagged.
    pub gradient_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            starts: vec![0.1, 1.0],
            evaluations_per_dim: 5000,
            f_tol: 1e-8,
            x_tol: 1e-6,
            screening_f_tol: 1e-2,
            screening_x_tol: 1e-2,
            polish_step: 0.1,
            polish_min_step: 0.01,
            fixed_theta: None,
            vc_information: true,
            fd_relative_step: 1e-4,
            gradient_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VarianceComponents {
    /// Random-slope SDs, `tau[g][j]` for group `g` (0-based) and regressor
    /// `j = (k - 1) R + r'`.
    pub tau: Vec<Vec<f64>>,
    pub sigma: f64,
}

/// A variance-component parameter as seen by the delta method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum VcParameter {
    /// `theta[g][j] = tau[g][j] / sigma`, `g` 1-based.
    Theta { group: usize, index: usize },
    Sigma,
}

/// Asymptotic covariance of the free variance components and the gradient
/// of every fixed-effect sampling variance with respect to them.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VcInformation {
    pub parameters: Vec<VcParameter>,
    pub covariance: Vec<Vec<f64>>,
    /// `variance_gradient[c][a] = d SE(beta_c)^2 / d parameters[a]`.
    pub variance_gradient: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StartOutcome {
    pub start: f64,
    pub deviance: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Convergence {
    pub converged: bool,
    pub evaluations: usize,
    /// Centered finite-difference gradient norm over interior components.
    pub gradient_norm: f64,
    /// `gradient_norm / max(|deviance|, 1)`.
    pub relative_gradient_norm: f64,
    /// `boundary[g][j]`: component estimated at exactly zero.
    pub boundary: Vec<Vec<bool>>,
    pub starts: Vec<StartOutcome>,
    pub warnings: Vec<String>,
}

impl Convergence {
    pub fn boundary_hits(&self) -> usize {
        self.boundary.iter().flatten().filter(|b| **b).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubjectBlup {
    pub subject_id: String,
    /// 1-based.
    pub group: usize,
    /// Indexed like `VarianceComponents::tau` columns.
    pub effects: Vec<f64>,
}

/// One fitted target-channel mixed VAR.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixedVarFit {
    pub band: Option<String>,
    pub target_channel: usize,
    pub channel_names: Vec<String>,
    pub lag: usize,
    pub n_groups: usize,
    pub n_obs: usize,
    pub subjects_per_group: Vec<usize>,
    pub objective: Objective,
    pub labels: Vec<ColumnLabel>,
    pub beta: Vec<f64>,
    pub beta_cov: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub components: VarianceComponents,
    pub blups: Vec<SubjectBlup>,
    /// Profiled deviance under `objective`.
    pub deviance: f64,
    pub vc_information: Option<VcInformation>,
    pub convergence: Convergence,
}

impl MixedVarFit {
    pub fn target_name(&self) -> &str {
        &self.channel_names[self.target_channel]
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn column_index(&self, label: &ColumnLabel) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn coefficient(&self, label: &ColumnLabel) -> Option<f64> {
        self.column_index(label).map(|c| self.beta[c])
    }

    pub fn standard_error(&self, col: usize) -> f64 {
        self.beta_cov[col][col].max(0.0).sqrt()
    }

    pub fn reml_deviance(&self) -> Option<f64> {
        (self.objective == Objective::Reml).then_some(self.deviance)
    }

    pub fn ml_deviance(&self) -> Option<f64> {
        (self.objective == Objective::Ml).then_some(self.deviance)
    }
}

/// Full and reduced ML fits for a likelihood ratio test.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedMlFits {
    pub full: MixedVarFit,
    pub reduced: MixedVarFit,
    pub excluded: Vec<ColumnLabel>,
}

pub fn fit_reml(design: &MixedDesign, config: &FitConfig) -> Result<MixedVarFit> {
    fit(design, Objective::Reml, config)
}

/// ML fits of `design` and of `design` without `excluded` fixed columns.
pub fn fit_ml_nested(design: &MixedDesign, excluded: &[ColumnLabel], config: &FitConfig) -> Result<NestedMlFits> {
    let reduced_design = design.without_fixed(excluded)?;
    let full = fit(design, Objective::Ml, config)?;
    let reduced = if excluded.is_empty() {
        full.clone()
    } else {
        fit(&reduced_design, Objective::Ml, config)?
    };
    Ok(NestedMlFits {
        full,
        reduced,
        excluded: excluded.to_vec(),
    })
}

fn fd_step(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1e-2)
}

pub fn fit(design: &MixedDesign, objective: Objective, config: &FitConfig) -> Result<MixedVarFit> {
    let pd = ProfiledDeviance::new(design)?;
    let dim = pd.n_theta();
    let q = design.block_size();
    let g_count = design.n_groups;
    let objective_fn = |x: &[f64]| pd.deviance(x, objective).unwrap_or(f64::INFINITY);

    let mut starts = Vec::new();
    let mut evaluations = 0;
    let mut warnings = Vec::new();
    let (mut theta, free_mask) = match &config.fixed_theta {
        Some(t) => {
            if t.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "fixed theta has {} entries, expected {dim}",
                    t.len()
                )));
            }
            (t.clone(), vec![false; dim])
        }
        None => {
            if config.starts.is_empty() {
                return Err(Error::invalid("at least one optimizer start is required"));
            }
            let budget = config.evaluations_per_dim * dim.max(1);
            let screen = NelderMeadConfig {
                max_evaluations: budget,
                f_tol: config.screening_f_tol.max(config.f_tol),
                x_tol: config.screening_x_tol.max(config.x_tol),
                ..Default::default()
            };
            let nm = NelderMeadConfig {
                max_evaluations: budget,
                f_tol: config.f_tol,
                x_tol: config.x_tol,
                relative_step: config.polish_step,
                min_step: config.polish_min_step,
            };
            let lower = vec![0.0; dim];
            let mut best: Option<(Vec<f64>, f64)> = None;
            for &s in &config.starts {
                let m = minimize_bounded(objective_fn, &vec![s; dim], &lower, &screen);
                evaluations += m.evaluations;
                starts.push(StartOutcome {
                    start: s,
                    deviance: m.f,
                    evaluations: m.evaluations,
                    converged: m.converged,
                });
                if best.as_ref().is_none_or(|(_, f)| m.f < *f) {
                    best = Some((m.x, m.f));
                }
            }
            let (x, f) = best.expect("at least one start");
            // refine the winner to the final tolerances from a fresh, smaller simplex
            let polish = minimize_bounded(objective_fn, &x, &lower, &nm);
            evaluations += polish.evaluations;
            if !polish.converged {
                return Err(Error::NoConvergence { evaluations });
            }
            let mut x = if polish.f <= f { polish.x } else { x };
            let mut fx = objective_fn(&x);
            if !fx.is_finite() {
                return Err(Error::Numerical("deviance is not finite at the optimum".into()));
            }
            // components sitting within optimizer noise of zero go to the boundary
            for j in 0..dim {
                if x[j] > 0.0 && x[j] < 1e-3 {
                    let old = x[j];
                    x[j] = 0.0;
                    let f0 = objective_fn(&x);
                    evaluations += 1;
                    if f0 <= fx + config.f_tol {
                        fx = fx.min(f0);
                    } else {
                        x[j] = old;
                    }
                }
            }
            let mask = x.iter().map(|v| *v > 0.0).collect();
            (x, mask)
        }
    };
    for t in &mut theta {
        if *t < 0.0 {
            *t = 0.0;
        }
    }

    let sol = pd.solve(&theta)?;
    let deviance = pd.profiled_from_terms(&sol.terms, objective);
    let sigma2 = sol.terms.pwrss / pd.residual_df(objective);
    let sigma = sigma2.sqrt();

    // gradient check over interior components
    let mut grad_sq = 0.0;
    for j in (0..dim).filter(|j| free_mask[*j]) {
        let h = fd_step(theta[j], config.fd_relative_step);
        let mut xp = theta.clone();
        let mut xm = theta.clone();
        xp[j] += h;
        let g = if theta[j] - h >= 0.0 {
            xm[j] -= h;
            (objective_fn(&xp) - objective_fn(&xm)) / (2.0 * h)
        } else {
            (objective_fn(&xp) - deviance) / h
        };
        grad_sq += g * g;
    }
    let gradient_norm = grad_sq.sqrt();
    let relative_gradient_norm = gradient_norm / deviance.abs().max(1.0);
    if relative_gradient_norm > config.gradient_tolerance {
        warnings.push(format!(
            "relative gradient norm {relative_gradient_norm:.3e} exceeds tolerance at the optimum"
        ));
    }
    let boundary: Vec<Vec<bool>> = (0..g_count)
        .map(|g| (0..q).map(|j| config.fixed_theta.is_none() && theta[g * q + j] == 0.0).collect())
        .collect();
    let hits = boundary.iter().flatten().filter(|b| **b).count();
    if hits > 0 {
        warnings.push(format!("{hits} variance components estimated at the boundary"));
    }

    let vc_information = if config.vc_information && objective == Objective::Reml {
        match vc_information(&pd, &theta, &free_mask, sigma, &sol.terms, config.fd_relative_step) {
            Ok(info) => Some(info),
            Err(e) => {
                warnings.push(format!("variance-component information unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };

    let nf = pd.n_fixed();
    let beta_cov = (0..nf)
        .map(|a| (0..nf).map(|c| sigma2 * sol.unscaled_beta_cov[a * nf + c]).collect())
        .collect();
    let tau = (0..g_count)
        .map(|g| theta[g * q..(g + 1) * q].iter().map(|t| t * sigma).collect())
        .collect();
    let blups = design
        .subjects
        .iter()
        .zip(&sol.blups)
        .map(|(s, b)| SubjectBlup {
            subject_id: s.subject_id.clone(),
            group: s.group + 1,
            effects: b.clone(),
        })
        .collect();
    let mut subjects_per_group = vec![0; g_count];
    for s in &design.subjects {
        subjects_per_group[s.group] += 1;
    }
    Ok(MixedVarFit {
        band: None,
        target_channel: design.target_channel,
        channel_names: design.channel_names.clone(),
        lag: design.lag,
        n_groups: g_count,
        n_obs: design.n_obs(),
        subjects_per_group,
        objective,
        labels: design.fixed_columns.clone(),
        beta: sol.beta,
        beta_cov,
        theta,
        components: VarianceComponents { tau, sigma },
        blups,
        deviance,
        vc_information,
        convergence: Convergence {
            converged: true,
            evaluations,
            gradient_norm,
            relative_gradient_norm,
            boundary,
            starts,
            warnings,
        },
    })
}

/// Delta-method ingredients at the REML optimum.
///
/// The unprofiled deviance is `T(theta) + m log(2 pi sigma^2) + P(theta) /
/// sigma^2`, with `T` the log-determinants and `P` the penalized residual
/// sum of squares. Its `sigma` derivatives are analytic; the `theta` block
/// and `dP/dtheta` use central differences. The covariance of the
/// estimates is twice the inverse Hessian.
fn vc_information(
    pd: &ProfiledDeviance,
    theta: &[f64],
    free_mask: &[bool],
    sigma: f64,
    terms: &DevianceTerms,
    rel: f64,
) -> Result<VcInformation> {
    let free: Vec<usize> = (0..theta.len()).filter(|j| free_mask[*j]).collect();
    let nfree = free.len();
    let np = nfree + 1;
    let q = pd.block_size();
    let s2 = sigma * sigma;
    let m = pd.residual_df(Objective::Reml);

    // stencil centers kept far enough from zero for central differences
    let steps: Vec<f64> = free.iter().map(|j| fd_step(theta[*j], rel)).collect();
    let mut center = theta.to_vec();
    for (a, j) in free.iter().enumerate() {
        center[*j] = center[*j].max(steps[a]);
    }
    let eval = |x: &[f64]| -> Result<DevianceTerms> { pd.terms(x) };
    let g_of = |t: &DevianceTerms| t.logdet_random + t.logdet_fixed + t.pwrss / s2;
    let t0 = if center == theta { *terms } else { eval(&center)? };
    let g0 = g_of(&t0);

    let mut h = vec![0.0; np * np];
    let mut dp = vec![0.0; nfree];
    let mut plus = Vec::with_capacity(nfree);
    let mut minus = Vec::with_capacity(nfree);
    for (a, j) in free.iter().enumerate() {
        let mut x = center.clone();
        x[*j] += steps[a];
        let tp = eval(&x)?;
        x[*j] = center[*j] - steps[a];
        let tm = eval(&x)?;
        h[a * np + a] = (g_of(&tp) - 2.0 * g0 + g_of(&tm)) / (steps[a] * steps[a]);
        dp[a] = (tp.pwrss - tm.pwrss) / (2.0 * steps[a]);
        plus.push(tp);
        minus.push(tm);
    }
    for a in 0..nfree {
        for b in 0..a {
            let (ja, jb) = (free[a], free[b]);
            let mut x = center.clone();
            let mut corner = |sa: f64, sb: f64| -> Result<f64> {
                x[ja] = center[ja] + sa * steps[a];
                x[jb] = center[jb] + sb * steps[b];
                Ok(g_of(&eval(&x)?))
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / (4.0 * steps[a] * steps[b]);
            h[a * np + b] = v;
            h[b * np + a] = v;
        }
    }
    let sp = nfree;
    h[sp * np + sp] = -2.0 * m / s2 + 6.0 * terms.pwrss / (s2 * s2);
    for a in 0..nfree {
        let v = -2.0 * dp[a] / (s2 * sigma);
        h[a * np + sp] = v;
        h[sp * np + a] = v;
    }
    let mut l = h.clone();
    if linalg::cholesky(&mut l, np).is_none() {
        return Err(Error::Singular {
            block: "variance-component Hessian".into(),
        });
    }
    let hinv = linalg::cholesky_inverse(&l, np);
    let covariance = (0..np).map(|a| (0..np).map(|b| 2.0 * hinv[a * np + b]).collect()).collect();

    // d SE^2 / d theta by central differences, analytic in sigma
    let base = pd.unscaled_beta_variances(theta)?;
    let nf = base.len();
    let mut variance_gradient = vec![vec![0.0; np]; nf];
    for (a, j) in free.iter().enumerate() {
        let mut x = center.clone();
        x[*j] += steps[a];
        let vp = pd.unscaled_beta_variances(&x)?;
        x[*j] = center[*j] - steps[a];
        let vm = pd.unscaled_beta_variances(&x)?;
        for c in 0..nf {
            variance_gradient[c][a] = s2 * (vp[c] - vm[c]) / (2.0 * steps[a]);
        }
    }
    for c in 0..nf {
        variance_gradient[c][sp] = 2.0 * sigma * base[c];
    }
    let mut parameters: Vec<VcParameter> = free
        .iter()
        .map(|j| VcParameter::Theta {
            group: j / q + 1,
            index: j % q,
        })
        .collect();
    parameters.push(VcParameter::Sigma);
    Ok(VcInformation {
        parameters,
        covariance,
        variance_gradient,
    })
}
