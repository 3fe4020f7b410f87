//! Mixed-effects VAR regression for one target channel.
//!
//! For target channel `r`, every subject contributes the rows
//! `y_i(t) = x_i(t)' (beta_g + b_i) + e_i(t)`, where `x_i(t)` stacks all
//! channels at lags `1..p`, `beta_g` is the fixed coefficient row of the
//! subject's group and `b_i ~ N(0, sigma^2 diag(theta_g)^2)` its random
//! deviation. Groups share the residual variance. Estimation is by REML
//! (ML for likelihood ratio tests) over `theta >= 0` with `beta` and
//! `sigma^2` profiled out.

mod design;
mod deviance;
mod fit;
mod satterthwaite;

pub use design::{build_design, build_design_with_groups, ColumnLabel, DesignSubject, MixedDesign};
pub use deviance::{DevianceTerms, Objective, ProfiledDeviance, Solution};
pub use fit::{
    fit, fit_ml_nested, fit_reml, Convergence, FitConfig, MixedVarFit, NestedMlFits, StartOutcome, SubjectBlup,
    VarianceComponents, VcInformation, VcParameter,
};
pub use satterthwaite::{fixed_effect_inference, satterthwaite_df, CoefficientTest};
