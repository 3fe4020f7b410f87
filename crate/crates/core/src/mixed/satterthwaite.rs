use crate::error::{Error, Result};
use crate::mixed::design::ColumnLabel;
use crate::mixed::fit::MixedVarFit;
use crate::stats;

/// Wald test of one fixed effect with Satterthwaite degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoefficientTest {
    pub label: ColumnLabel,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    /// Infinite when the normal approximation was used.
    pub df: f64,
    pub p: f64,
    /// The estimated df was not positive and finite; `p` is from the normal.
    pub normal_fallback: bool,
}

/// `2 (SE^2)^2 / Var(SE^2)` for fixed effect `col`, with `Var(SE^2)` by the
/// delta method. `None` when no variance-component information is
/// available or the estimate is not a positive finite number.
pub fn satterthwaite_df(fit: &MixedVarFit, col: usize) -> Option<f64> {
    let info = fit.vc_information.as_ref()?;
    let g = &info.variance_gradient[col];
    let mut var = 0.0;
    for (a, ga) in g.iter().enumerate() {
        for (b, gb) in g.iter().enumerate() {
            var += ga * info.covariance[a][b] * gb;
        }
    }
    let se2 = fit.beta_cov[col][col];
    let df = 2.0 * se2 * se2 / var;
    (df.is_finite() && df > 0.0).then_some(df)
}

pub fn fixed_effect_inference(fit: &MixedVarFit) -> Result<Vec<CoefficientTest>> {
    if fit.vc_information.is_none() {
        return Err(Error::invalid(format!(
            "fit of target `{}` carries no variance-component information",
            fit.target_name()
        )));
    }
    let mut out = Vec::with_capacity(fit.beta.len());
    for (c, label) in fit.labels.iter().enumerate() {
        let se = fit.standard_error(c);
        if !(se > 0.0) {
            return Err(Error::Numerical(format!("zero standard error for fixed effect {c}")));
        }
        let estimate = fit.beta[c];
        let t = estimate / se;
        let (df, p, normal_fallback) = match satterthwaite_df(fit, c) {
            Some(df) => (df, stats::t_two_sided(t, df), false),
            None => (f64::INFINITY, stats::normal_two_sided(t), true),
        };
        out.push(CoefficientTest {
            label: *label,
            estimate,
            se,
            t,
            df,
            p,
            normal_fallback,
        });
    }
    Ok(out)
}
