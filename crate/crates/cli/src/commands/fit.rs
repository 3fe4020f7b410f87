//! `fit`: the mixed-effects VAR for every band and target channel.
//!
//! Bundle layout under `<out>/fits`:
//!
//! - `<band>/<channel>.json`: the fit and its fixed-effect tests
//! - `summary.json`: run settings and one status row per fit
//!
//! A failed fit is recorded in the summary, the remaining fits still run,
//! and the command then exits with a numerical-failure status.

use std::path::Path;

use mespec_core::filter::decompose_bands;
use mespec_core::mixed::{build_design, fit_reml, fixed_effect_inference, CoefficientTest, FitConfig, MixedVarFit};
use mespec_core::{BandDefinition, StudyDataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{Cli, FitArgs};
use crate::error::{CliError, CoreContext, Result};
use crate::io;

pub const SUMMARY_FILE: &str = "summary.json";

/// Contents of `<band>/<channel>.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub fit: MixedVarFit,
    pub tests: Vec<CoefficientTest>,
}

/// What `graph` needs back from a fit file.
#[derive(Debug, Deserialize)]
pub struct FitFileHead {
    pub fit: MixedVarFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub lag: usize,
    pub outlier_k: f64,
    pub decomposed: bool,
    pub bands: Vec<BandEntry>,
    pub channels: Vec<String>,
    pub subjects: Vec<SubjectEntry>,
    pub failed: usize,
    pub fits: Vec<FitStatus>,
}

/// A fitted band; edges are absent when the input was fitted undecomposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEntry {
    pub name: String,
    pub low_hz: Option<f64>,
    pub high_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStatus {
    pub band: String,
    pub target: String,
    /// Relative to the bundle directory; absent for failed fits.
    pub file: Option<String>,
    pub converged: bool,
    pub evaluations: usize,
    pub deviance: Option<f64>,
    pub sigma: Option<f64>,
    pub boundary_components: usize,
    pub relative_gradient_norm: Option<f64>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

impl FitSummary {
    pub fn read(bundle: &Path) -> Result<Self> {
        io::read_json(&bundle.join(SUMMARY_FILE))
    }
}

fn fit_config(args: &FitArgs) -> Result<FitConfig> {
    if args.lag == 0 {
        return Err(CliError::Usage("--lag must be at least 1".into()));
    }
    if args.starts.is_empty() || args.starts.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(CliError::Usage("--starts must be non-negative numbers".into()));
    }
    if args.evals_per_dim == 0 || !(args.f_tol > 0.0) || !(args.x_tol > 0.0) {
        return Err(CliError::Usage("optimizer budget and tolerances must be positive".into()));
    }
    Ok(FitConfig {
        starts: args.starts.clone(),
        evaluations_per_dim: args.evals_per_dim,
        f_tol: args.f_tol,
        x_tol: args.x_tol,
        ..FitConfig::default()
    })
}

fn fit_one(data: &StudyDataset, band: &str, target: usize, lag: usize, cfg: &FitConfig) -> mespec_core::Result<FitFile> {
    let design = build_design(data, target, lag)?;
    let mut fit = fit_reml(&design, cfg)?;
    fit.band = Some(band.to_string());
    let tests = fixed_effect_inference(&fit)?;
    Ok(FitFile { fit, tests })
}

fn fit_and_write(data: &StudyDataset, band: &str, target: usize, lag: usize, cfg: &FitConfig, bundle: &Path) -> Result<FitStatus> {
    let channel = &data.channel_names()[target];
    let status = match fit_one(data, band, target, lag, cfg) {
        Ok(file) => {
            let rel = format!("{band}/{channel}.json");
            io::write_json(&bundle.join(&rel), &file)?;
            let conv = &file.fit.convergence;
            log::info!("fit {band}/{channel}: {} evaluations", conv.evaluations);
            FitStatus {
                band: band.to_string(),
                target: channel.clone(),
                file: Some(rel),
                converged: conv.converged,
                evaluations: conv.evaluations,
                deviance: Some(file.fit.deviance),
                sigma: Some(file.fit.components.sigma),
                boundary_components: conv.boundary_hits(),
                relative_gradient_norm: Some(conv.relative_gradient_norm).filter(|v| v.is_finite()),
                warnings: conv.warnings.clone(),
                error: None,
            }
        }
        Err(e) => {
            log::warn!("fit {band}/{channel} failed: {e}");
            FitStatus {
                band: band.to_string(),
                target: channel.clone(),
                file: None,
                converged: false,
                evaluations: 0,
                deviance: None,
                sigma: None,
                boundary_components: 0,
                relative_gradient_norm: None,
                warnings: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    };
    Ok(status)
}

pub fn run(cli: &Cli, args: &FitArgs) -> Result<()> {
    let cfg = fit_config(args)?;
    let raw = super::load_dataset(cli)?;
    super::check_names(&raw)?;
    let ds = super::preprocess(&raw, args.outlier_k)?;

    let bands: Vec<BandEntry> = if args.no_decompose {
        if !super::is_safe_name(&args.band_name) {
            return Err(CliError::Usage(format!("band name `{}` is not usable as a file name", args.band_name)));
        }
        vec![BandEntry {
            name: args.band_name.clone(),
            low_hz: None,
            high_hz: None,
        }]
    } else {
        super::resolve_bands(&args.bands, ds.sampling_rate_hz())?
            .into_iter()
            .map(|b| BandEntry {
                name: b.name,
                low_hz: Some(b.low_hz),
                high_hz: Some(b.high_hz),
            })
            .collect()
    };

    let bundle = cli.out.join("fits");
    let mut statuses = Vec::with_capacity(bands.len() * ds.n_channels());
    // one band at a time keeps a single band-limited copy of the data alive
    for band in &bands {
        let data = match (band.low_hz, band.high_hz) {
            (Some(lo), Some(hi)) => {
                let def = BandDefinition::new(&band.name, lo, hi);
                ds.map_series(|s| Ok(decompose_bands(&s.series, std::slice::from_ref(&def))?.into_inner().remove(0).1))
                    .context(|| format!("band `{}`", band.name))?
            }
            _ => ds.clone(),
        };
        let band_statuses = (0..ds.n_channels())
            .into_par_iter()
            .map(|target| fit_and_write(&data, &band.name, target, args.lag, &cfg, &bundle))
            .collect::<Result<Vec<_>>>()?;
        statuses.extend(band_statuses);
    }

    let failed = statuses.iter().filter(|s| s.error.is_some()).count();
    let summary = FitSummary {
        lag: args.lag,
        outlier_k: args.outlier_k,
        decomposed: !args.no_decompose,
        bands,
        channels: ds.channel_names().to_vec(),
        subjects: ds
            .subjects()
            .iter()
            .map(|s| SubjectEntry {
                id: s.subject_id.clone(),
                group: s.group_index,
            })
            .collect(),
        failed,
        fits: statuses,
    };
    io::write_json(&bundle.join(SUMMARY_FILE), &summary)?;
    if failed > 0 {
        return Err(CliError::Numerical(format!(
            "{failed} of {} fits failed; see {}",
            summary.fits.len(),
            bundle.join(SUMMARY_FILE).display()
        )));
    }
    Ok(())
}
