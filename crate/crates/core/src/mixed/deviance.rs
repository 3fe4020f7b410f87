use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mixed::design::MixedDesign;

/// Which likelihood the deviance profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Objective {
    Reml,
    Ml,
}

/// The pieces the deviance is assembled from at a given `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevianceTerms {
    /// `sum_i log det(Lambda C_i Lambda + I)`.
    pub logdet_random: f64,
    /// `log det(X' V^-1 X)` up to the `sigma^2` factor, summed over groups.
    pub logdet_fixed: f64,
    /// Penalized weighted residual sum of squares.
    pub pwrss: f64,
}

#[derive(Debug, Clone)]
struct SubjectStats {
    group: usize,
    /// `[X_i'X_i, X_i'y_i; y_i'X_i, y_i'y_i]`, row-major `(q + 1) x (q + 1)`.
    aug: Vec<f64>,
}

#[derive(Debug, Clone)]
struct GroupColumns {
    /// Regressor indices (within `0..q`) of this group's fixed columns.
    regressors: Vec<usize>,
    /// Matching positions in the fixed-effect vector.
    positions: Vec<usize>,
}

/// Fixed effects and random-effect predictions at a given `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub terms: DevianceTerms,
    pub beta: Vec<f64>,
    /// `(X' V^-1 X)^-1 / sigma^2`, block-diagonal by group, dense
    /// `n_fixed x n_fixed` row-major.
    pub unscaled_beta_cov: Vec<f64>,
    /// Per subject, length `q`: `Lambda u_i`, in units of the response.
    pub blups: Vec<Vec<f64>>,
}

/// Profiled (RE)ML deviance of one target-channel mixed design.
///
/// The random effects of subject `i` are `b_i = sigma Lambda_g u_i` with
/// `u_i ~ N(0, I)` and `Lambda_g = diag(theta_g)`. Subjects decouple, so the
/// penalized normal equations are reduced subject by subject: with
/// `C_i = X_i'X_i`, `A_i = Lambda C_i Lambda + I = L_i L_i'` and
/// `M_i = L_i^-1 Lambda C_i`, the Schur complement `C_i - M_i'M_i` summed over
/// a group is that group's fixed-effect information. Only per-subject
/// cross-products are kept, so an evaluation is independent of series
/// length.
#[derive(Debug, Clone)]
pub struct ProfiledDeviance {
    q: usize,
    n_obs: usize,
    n_fixed: usize,
    subjects: Vec<SubjectStats>,
    groups: Vec<GroupColumns>,
}

/// Per group, the accumulated augmented Schur complement
/// `sum_i [W_i, w_i; w_i', e_i]`, row-major `(q + 1) x (q + 1)`, plus the
/// random-effect log-determinant.
struct Sweep {
    schur: Vec<Vec<f64>>,
    logdet_random: f64,
}

impl ProfiledDeviance {
    pub fn new(design: &MixedDesign) -> Result<Self> {
        let q = design.block_size();
        let x = design.regressors.as_slice();
        let n = design.n_obs();
        let y = &design.response;
        let qa = q + 1;
        let mut subjects = Vec::with_capacity(design.n_subjects());
        for s in &design.subjects {
            let rows = s.rows.clone();
            let col = |j: usize| if j < q { &x[j * n..(j + 1) * n][rows.clone()] } else { &y[rows.clone()] };
            let mut aug = vec![0.0; qa * qa];
            for j in 0..qa {
                for k in 0..=j {
                    let v = linalg::dot(col(j), col(k));
                    aug[j * qa + k] = v;
                    aug[k * qa + j] = v;
                }
            }
            subjects.push(SubjectStats { group: s.group, aug });
        }
        let r = design.n_channels();
        let mut groups: Vec<GroupColumns> = (0..design.n_groups)
            .map(|_| GroupColumns {
                regressors: Vec::new(),
                positions: Vec::new(),
            })
            .collect();
        for (pos, label) in design.fixed_columns.iter().enumerate() {
            if label.group == 0 || label.group > design.n_groups {
                return Err(Error::invalid(format!("fixed column with group {}", label.group)));
            }
            let g = &mut groups[label.group - 1];
            g.regressors.push(label.regressor_index(r));
            g.positions.push(pos);
        }
        let n_fixed = design.n_fixed();
        if design.n_obs() <= n_fixed {
            return Err(Error::DimensionMismatch(format!(
                "{} observations for {} fixed effects",
                design.n_obs(),
                n_fixed
            )));
        }
        Ok(Self {
            q,
            n_obs: design.n_obs(),
            n_fixed,
            subjects,
            groups,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_fixed(&self) -> usize {
        self.n_fixed
    }

    /// Regressors per subject, `R * p`.
    pub fn block_size(&self) -> usize {
        self.q
    }

    /// Length of `theta`: `G * q`, group-major.
    pub fn n_theta(&self) -> usize {
        self.groups.len() * self.q
    }

    /// Degrees of freedom in the residual variance estimate.
    pub fn residual_df(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Reml => (self.n_obs - self.n_fixed) as f64,
            Objective::Ml => self.n_obs as f64,
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_theta() {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                self.n_theta()
            )));
        }
        if theta.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::invalid("theta entries must be finite and non-negative"));
        }
        Ok(())
    }

    fn sweep(&self, theta: &[f64]) -> Result<Sweep> {
        let q = self.q;
        let qa = q + 1;
        let mut schur = vec![vec![0.0; qa * qa]; self.groups.len()];
        let mut logdet_random = 0.0;
        let mut a = vec![0.0; q * q];
        let mut m = vec![0.0; q * qa];
        for (i, s) in self.subjects.iter().enumerate() {
            let lam = &theta[s.group * q..(s.group + 1) * q];
            let w = &mut schur[s.group];
            for (acc, v) in w.iter_mut().zip(&s.aug) {
                *acc += v;
            }
            if lam.iter().all(|l| *l == 0.0) {
                continue;
            }
            // A = Lambda C Lambda + I and M = Lambda [C c]
            for (j, &lj) in lam.iter().enumerate() {
                let crow = &s.aug[j * qa..(j + 1) * qa];
                for ((av, &lk), &c) in a[j * q..(j + 1) * q].iter_mut().zip(lam).zip(crow) {
                    *av = lj * lk * c;
                }
                a[j * q + j] += 1.0;
                for (mv, &c) in m[j * qa..(j + 1) * qa].iter_mut().zip(crow) {
                    *mv = lj * c;
                }
            }
            let ld = linalg::cholesky(&mut a, q).ok_or_else(|| Error::Singular {
                block: format!("random-effects block of subject {i}"),
            })?;
            logdet_random += ld;
            linalg::solve_lower_multi(&a, q, &mut m, qa);
            // subtract M'M, lower triangle only; rows with lambda_l = 0 are zero
            for (l, &ll) in lam.iter().enumerate() {
                if ll == 0.0 {
                    continue;
                }
                let ml = &m[l * qa..(l + 1) * qa];
                for (j, &mj) in ml.iter().enumerate() {
                    if mj == 0.0 {
                        continue;
                    }
                    for (wv, &mk) in w[j * qa..j * qa + j + 1].iter_mut().zip(ml) {
                        *wv -= mj * mk;
                    }
                }
            }
        }
        for w in &mut schur {
            for j in 0..qa {
                for k in 0..j {
                    w[k * qa + j] = w[j * qa + k];
                }
            }
        }
        Ok(Sweep { schur, logdet_random })
    }

    /// Solves each group's fixed-effect system, returning the terms and,
    /// per group, the Cholesky factor and the kept right-hand side solution.
    fn reduce(&self, sweep: &Sweep) -> Result<(DevianceTerms, Vec<(Vec<f64>, Vec<f64>)>)> {
        let q = self.q;
        let qa = q + 1;
        let mut logdet_fixed = 0.0;
        let mut pwrss: f64 = sweep.schur.iter().map(|w| w[q * qa + q]).sum();
        let mut factors = Vec::with_capacity(self.groups.len());
        for (g, cols) in self.groups.iter().enumerate() {
            let k = cols.regressors.len();
            let mut s = linalg::submatrix(&sweep.schur[g], qa, &cols.regressors);
            let mut beta: Vec<f64> = cols.regressors.iter().map(|j| sweep.schur[g][j * qa + q]).collect();
            let rhs = beta.clone();
            if k > 0 {
                let ld = linalg::cholesky(&mut s, k).ok_or_else(|| Error::Singular {
                    block: format!("fixed effects of group {}", g + 1),
                })?;
                logdet_fixed += ld;
                linalg::cholesky_solve(&s, k, &mut beta);
                pwrss -= linalg::dot(&rhs, &beta);
            }
            factors.push((s, beta));
        }
        if !(pwrss > 0.0) || !pwrss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-positive penalized residual sum of squares ({pwrss:e})"
            )));
        }
        Ok((
            DevianceTerms {
                logdet_random: sweep.logdet_random,
                logdet_fixed,
                pwrss,
            },
            factors,
        ))
    }

    pub fn terms(&self, theta: &[f64]) -> Result<DevianceTerms> {
        self.check_theta(theta)?;
        let sweep = self.sweep(theta)?;
        Ok(self.reduce(&sweep)?.0)
    }

    /// `-2` times the profiled log-likelihood (`beta` and `sigma^2`
    /// maximized out).
    pub fn deviance(&self, theta: &[f64], objective: Objective) -> Result<f64> {
        let t = self.terms(theta)?;
        Ok(self.profiled_from_terms(&t, objective))
    }

    pub fn profiled_from_terms(&self, t: &DevianceTerms, objective: Objective) -> f64 {
        let m = self.residual_df(objective);
        let base = match objective {
            Objective::Reml => t.logdet_random + t.logdet_fixed,
            Objective::Ml => t.logdet_random,
        };
        base + m * (1.0 + (2.0 * PI * t.pwrss / m).ln())
    }

    /// `-2` times the log-likelihood at an explicit residual SD, with only
    /// `beta` profiled.
    pub fn unprofiled_from_terms(&self, t: &DevianceTerms, sigma: f64, objective: Objective) -> f64 {
        let m = self.residual_df(objective);
        let base = match objective {
            Objective::Reml => t.logdet_random + t.logdet_fixed,
            Objective::Ml => t.logdet_random,
        };
        base + m * (2.0 * PI * sigma * sigma).ln() + t.pwrss / (sigma * sigma)
    }

    /// Diagonal of `(X' V^-1 X)^-1 / sigma^2`, in fixed-effect order.
    pub fn unscaled_beta_variances(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let sweep = self.sweep(theta)?;
        let (_, factors) = self.reduce(&sweep)?;
        let mut out = vec![0.0; self.n_fixed];
        for (cols, (l, _)) in self.groups.iter().zip(&factors) {
            let k = cols.regressors.len();
            if k == 0 {
                continue;
            }
            let inv = linalg::cholesky_inverse(l, k);
            for (a, pos) in cols.positions.iter().enumerate() {
                out[*pos] = inv[a * k + a];
            }
        }
        Ok(out)
    }

    /// Fixed effects, their unscaled covariance and the subject predictions.
    pub fn solve(&self, theta: &[f64]) -> Result<Solution> {
        self.check_theta(theta)?;
        let q = self.q;
        let sweep = self.sweep(theta)?;
        let (terms, factors) = self.reduce(&sweep)?;
        let nf = self.n_fixed;
        let mut beta = vec![0.0; nf];
        let mut cov = vec![0.0; nf * nf];
        // group coefficient vectors expanded to full regressor length
        let mut full = vec![vec![0.0; q]; self.groups.len()];
        for (g, (cols, (l, b))) in self.groups.iter().zip(&factors).enumerate() {
            let k = cols.regressors.len();
            for (a, (&pos, &reg)) in cols.positions.iter().zip(&cols.regressors).enumerate() {
                beta[pos] = b[a];
                full[g][reg] = b[a];
            }
            if k == 0 {
                continue;
            }
            let inv = linalg::cholesky_inverse(l, k);
            for (a, pa) in cols.positions.iter().enumerate() {
                for (c, pc) in cols.positions.iter().enumerate() {
                    cov[pa * nf + pc] = inv[a * k + c];
                }
            }
        }
        let mut blups = Vec::with_capacity(self.subjects.len());
        let mut a = vec![0.0; q * q];
        let mut u = vec![0.0; q];
        for s in &self.subjects {
            let lam = &theta[s.group * q..(s.group + 1) * q];
            if lam.iter().all(|l| *l == 0.0) {
                blups.push(vec![0.0; q]);
                continue;
            }
            let qa = q + 1;
            for j in 0..q {
                let mut cb = 0.0;
                for k in 0..q {
                    let c = s.aug[j * qa + k];
                    a[j * q + k] = lam[j] * lam[k] * c;
                    cb += c * full[s.group][k];
                }
                a[j * q + j] += 1.0;
                u[j] = lam[j] * (s.aug[j * qa + q] - cb);
            }
            linalg::cholesky(&mut a, q).ok_or_else(|| Error::Singular {
                block: "random-effects block".into(),
            })?;
            linalg::cholesky_solve(&a, q, &mut u);
            blups.push(lam.iter().zip(&u).map(|(l, v)| l * v).collect());
        }
        Ok(Solution {
            terms,
            beta,
            unscaled_beta_cov: cov,
            blups,
        })
    }
}
