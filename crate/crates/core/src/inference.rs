//! Granger decisions, group comparisons and connectivity graphs built from
//! the per-channel mixed VAR fits of one band.
//!
//! An edge `r' -> r` at lag `k` in group `g` is drawn when the Satterthwaite
//! t-test of `Phi_{g,k}(r, r')` has raw p-value below `alpha` and the
//! estimate's magnitude exceeds a quantile of all absolute estimates of the
//! band and group. Bonferroni-adjusted p-values over the band's tests are
//! reported alongside. Self-loops are tested and reported but never drawn.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::mixed::{fixed_effect_inference, satterthwaite_df, ColumnLabel, MixedVarFit, Objective};
use crate::stats;

pub const DEFAULT_ALPHA: f64 = 1e-6;
pub const DEFAULT_MAGNITUDE_QUANTILE: f64 = 0.8;
/// Largest negative likelihood-ratio statistic attributed to rounding.
pub const LRT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EdgeTest {
    pub band: String,
    /// 1-based.
    pub group: usize,
    pub source: usize,
    pub target: usize,
    pub lag: usize,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    pub magnitude_pass: bool,
    pub normal_fallback: bool,
}

impl EdgeTest {
    pub fn key(&self) -> EdgeKey {
        EdgeKey {
            source: self.source,
            target: self.target,
            lag: self.lag,
        }
    }

    pub fn is_edge(&self) -> bool {
        self.significant && self.magnitude_pass && self.source != self.target
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EdgeKey {
    pub source: usize,
    pub target: usize,
    pub lag: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConnectivityGraph {
    pub band: String,
    pub group: usize,
    pub nodes: Vec<String>,
    /// Ordered by target, source, lag.
    pub edges: Vec<EdgeTest>,
    /// The magnitude cut applied to `|estimate|`.
    pub magnitude_threshold: f64,
}

impl ConnectivityGraph {
    pub fn edge_keys(&self) -> BTreeSet<EdgeKey> {
        self.edges.iter().map(EdgeTest::key).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupDifferenceGraph {
    pub band: String,
    pub nodes: Vec<String>,
    pub unique_to_group1: Vec<EdgeKey>,
    pub unique_to_group2: Vec<EdgeKey>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandInference {
    pub band: String,
    pub nodes: Vec<String>,
    /// Ordered by group, target, then fixed-effect column.
    pub tests: Vec<EdgeTest>,
    pub graphs: Vec<ConnectivityGraph>,
}

/// Orders the band's fits by target channel and checks they are complete
/// and mutually consistent.
fn by_target(fits: &[MixedVarFit]) -> Result<Vec<&MixedVarFit>> {
    let first = fits.first().ok_or_else(|| Error::invalid("no fits supplied"))?;
    let r = first.n_channels();
    let mut slots: Vec<Option<&MixedVarFit>> = vec![None; r];
    for f in fits {
        if f.channel_names != first.channel_names || f.band != first.band || f.n_groups != first.n_groups {
            return Err(Error::invalid("fits disagree on band, channels or groups"));
        }
        if f.target_channel >= r {
            return Err(Error::DimensionMismatch(format!("target channel {} out of range", f.target_channel)));
        }
        if slots[f.target_channel].replace(f).is_some() {
            return Err(Error::invalid(format!("duplicate fit for target `{}`", f.target_name())));
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::invalid(format!("missing fit for target `{}`", first.channel_names[i]))))
        .collect()
}

/// Tests every fixed effect of every target channel and builds one graph
/// per group.
pub fn granger_edges(fits: &[MixedVarFit], alpha: f64, magnitude_quantile: f64) -> Result<BandInference> {
    if !(0.0..1.0).contains(&magnitude_quantile) {
        return Err(Error::invalid("magnitude quantile must lie in [0, 1)"));
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid("alpha must be non-negative"));
    }
    let ordered = by_target(fits)?;
    let band = ordered[0].band.clone().unwrap_or_default();
    let nodes = ordered[0].channel_names.clone();
    let n_groups = ordered[0].n_groups;

    let mut tests = Vec::new();
    for g in 1..=n_groups {
        for fit in &ordered {
            for c in fixed_effect_inference(fit)? {
                if c.label.group != g {
                    continue;
                }
                tests.push(EdgeTest {
                    band: band.clone(),
                    group: g,
                    source: c.label.source,
                    target: fit.target_channel,
                    lag: c.label.lag,
                    estimate: c.estimate,
                    se: c.se,
                    t: c.t,
                    df: c.df,
                    p_raw: c.p,
                    p_adjusted: 0.0,
                    significant: c.p < alpha,
                    magnitude_pass: false,
                    normal_fallback: c.normal_fallback,
                });
            }
        }
    }
    let m = tests.len() as f64;
    for t in &mut tests {
        t.p_adjusted = (m * t.p_raw).min(1.0);
    }
    let mut graphs = Vec::with_capacity(n_groups);
    for g in 1..=n_groups {
        let mags: Vec<f64> = tests.iter().filter(|t| t.group == g).map(|t| t.estimate.abs()).collect();
        let threshold = stats::quantile(&mags, magnitude_quantile);
        for t in tests.iter_mut().filter(|t| t.group == g) {
            t.magnitude_pass = t.estimate.abs() > threshold;
        }
        let mut edges: Vec<EdgeTest> = tests.iter().filter(|t| t.group == g && t.is_edge()).cloned().collect();
        edges.sort_by_key(|e| (e.target, e.source, e.lag));
        graphs.push(ConnectivityGraph {
            band: band.clone(),
            group: g,
            nodes: nodes.clone(),
            edges,
            magnitude_threshold: threshold,
        });
    }
    Ok(BandInference {
        band,
        nodes,
        tests,
        graphs,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WelchTest {
    pub source: usize,
    pub target: usize,
    pub lag: usize,
    pub diff: f64,
    pub se_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Compares group 1 and group 2 for one coefficient of `fit`.
///
/// Each coefficient's Satterthwaite df enters the Welch-Satterthwaite
/// combination; a coefficient without one counts as having infinite df.
pub fn welch_group_difference(fit: &MixedVarFit, source: usize, lag: usize) -> Result<WelchTest> {
    let find = |g: usize| {
        fit.column_index(&ColumnLabel { group: g, source, lag })
            .ok_or_else(|| Error::invalid(format!("group {g} coefficient (source {source}, lag {lag}) not in fit")))
    };
    let (c1, c2) = (find(1)?, find(2)?);
    let (v1, v2) = (fit.beta_cov[c1][c1], fit.beta_cov[c2][c2]);
    let var = v1 + v2 - 2.0 * fit.beta_cov[c1][c2];
    if !(v1 > 0.0 && v2 > 0.0 && var > 0.0) {
        return Err(Error::Numerical("degenerate coefficient variance in group comparison".into()));
    }
    let df1 = satterthwaite_df(fit, c1).unwrap_or(f64::INFINITY);
    let df2 = satterthwaite_df(fit, c2).unwrap_or(f64::INFINITY);
    let denom = v1 * v1 / df1 + v2 * v2 / df2;
    let df = if denom > 0.0 { (v1 + v2).powi(2) / denom } else { f64::INFINITY };
    let diff = fit.beta[c1] - fit.beta[c2];
    let se_diff = var.sqrt();
    let t = diff / se_diff;
    Ok(WelchTest {
        source,
        target: fit.target_channel,
        lag,
        diff,
        se_diff,
        t,
        df,
        p: stats::t_two_sided(t, df),
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WelchRow {
    pub test: WelchTest,
    pub p_adjusted: f64,
    pub reject: bool,
}

/// Welch comparison of every coefficient pair of the band, Bonferroni
/// adjusted over all pairs. Rows are ordered by target, lag, source.
pub fn welch_table(fits: &[MixedVarFit], alpha: f64) -> Result<Vec<WelchRow>> {
    let ordered = by_target(fits)?;
    let mut tests = Vec::new();
    for fit in ordered {
        for lag in 1..=fit.lag {
            for source in 0..fit.n_channels() {
                tests.push(welch_group_difference(fit, source, lag)?);
            }
        }
    }
    let ps: Vec<f64> = tests.iter().map(|t| t.p).collect();
    let decisions = bonferroni(&ps, alpha)?;
    Ok(tests
        .into_iter()
        .zip(decisions)
        .map(|(test, d)| WelchRow {
            test,
            p_adjusted: d.adjusted,
            reject: d.reject,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LrtResult {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
}

/// Likelihood ratio test of nested ML fits.
pub fn lrt_edge(full: &MixedVarFit, reduced: &MixedVarFit) -> Result<LrtResult> {
    if full.objective != Objective::Ml || reduced.objective != Objective::Ml {
        return Err(Error::invalid("likelihood ratio tests need ML fits"));
    }
    let full_set: BTreeSet<_> = full.labels.iter().collect();
    let red_set: BTreeSet<_> = reduced.labels.iter().collect();
    if !red_set.is_subset(&full_set) || full.n_obs != reduced.n_obs || full.target_channel != reduced.target_channel {
        return Err(Error::invalid("reduced model is not nested in the full model"));
    }
    let df = full_set.len() - red_set.len();
    let raw = reduced.deviance - full.deviance;
    if raw < -LRT_TOLERANCE {
        return Err(Error::Numerical(format!(
            "negative likelihood ratio statistic {raw:e}; the full fit did not reach its optimum"
        )));
    }
    let statistic = raw.max(0.0);
    let p = if df == 0 { 1.0 } else { stats::chi2_upper(statistic, df as f64) };
    Ok(LrtResult { statistic, df, p })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonferroniDecision {
    pub adjusted: f64,
    pub reject: bool,
}

pub fn bonferroni(p_values: &[f64], alpha: f64) -> Result<Vec<BonferroniDecision>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len() as f64;
    Ok(p_values
        .iter()
        .map(|p| {
            let adjusted = (m * p).min(1.0);
            BonferroniDecision {
                adjusted,
                reject: adjusted < alpha,
            }
        })
        .collect())
}

pub fn diff_graphs(g1: &ConnectivityGraph, g2: &ConnectivityGraph) -> Result<GroupDifferenceGraph> {
    if g1.band != g2.band || g1.nodes != g2.nodes {
        return Err(Error::invalid("graphs differ in band or node set"));
    }
    let (a, b) = (g1.edge_keys(), g2.edge_keys());
    Ok(GroupDifferenceGraph {
        band: g1.band.clone(),
        nodes: g1.nodes.clone(),
        unique_to_group1: a.difference(&b).copied().collect(),
        unique_to_group2: b.difference(&a).copied().collect(),
    })
}

/// Random-effect SD matrices of one band.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Heatmaps {
    pub band: String,
    pub nodes: Vec<String>,
    /// `tau[g][k][r][r']`: group `g + 1`, lag `k + 1`, target `r`, source `r'`.
    pub tau: Vec<Vec<Vec<Vec<f64>>>>,
    pub boundary: Vec<Vec<Vec<Vec<bool>>>>,
    /// `|tau_1 - tau_2|`, indexed `[k][r][r']`.
    pub difference: Vec<Vec<Vec<f64>>>,
}

pub fn random_sd_heatmaps(fits: &[MixedVarFit]) -> Result<Heatmaps> {
    let ordered = by_target(fits)?;
    let r = ordered[0].n_channels();
    let p = ordered[0].lag;
    let n_groups = ordered[0].n_groups;
    let mut tau = vec![vec![vec![vec![0.0; r]; r]; p]; n_groups];
    let mut boundary = vec![vec![vec![vec![false; r]; r]; p]; n_groups];
    for fit in &ordered {
        if fit.lag != p {
            return Err(Error::invalid("fits disagree on lag order"));
        }
        for g in 0..n_groups {
            for k in 0..p {
                for src in 0..r {
                    let j = k * r + src;
                    tau[g][k][fit.target_channel][src] = fit.components.tau[g][j];
                    boundary[g][k][fit.target_channel][src] = fit.convergence.boundary[g][j];
                }
            }
        }
    }
    let difference = if n_groups >= 2 {
        (0..p)
            .map(|k| (0..r).map(|i| (0..r).map(|j| (tau[0][k][i][j] - tau[1][k][i][j]).abs()).collect()).collect())
            .collect()
    } else {
        vec![vec![vec![0.0; r]; r]; p]
    };
    Ok(Heatmaps {
        band: ordered[0].band.clone().unwrap_or_default(),
        nodes: ordered[0].channel_names.clone(),
        tau,
        boundary,
        difference,
    })
}
