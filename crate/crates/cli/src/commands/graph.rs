//! `graph`: connectivity graphs and group comparisons from a fit bundle.
//!
//! Per band, under `<out>/graphs/<band>/`:
//!
//! - `group<g>.dot`: edges of group `g`
//! - `edges.json`: every edge test and both graphs
//! - `difference.dot`, `difference.json`: edges present in one group only
//! - `tau_group<g>_lag<k>.csv`, `tau_difference_lag<k>.csv`: random-effect
//!   SD matrices, rows are targets and columns sources; `heatmaps.json`
//!   adds boundary flags; `heatmap_lag<k>.svg` with `--svg`
//! - `welch.csv`: group-difference test of every coefficient pair

use std::path::Path;

use mespec_core::inference::{
    diff_graphs, granger_edges, random_sd_heatmaps, welch_table, ConnectivityGraph, EdgeTest, WelchRow,
};
use mespec_core::mixed::MixedVarFit;
use serde::Serialize;

use crate::args::{Cli, GraphArgs};
use crate::commands::fit::{FitFileHead, FitSummary};
use crate::error::{CliError, CoreContext, Result};
use crate::io::{self, fmt_f64};
use crate::render::{self, Panel};

#[derive(Serialize)]
struct EdgesFile<'a> {
    band: &'a str,
    alpha: f64,
    magnitude_quantile: f64,
    nodes: &'a [String],
    tests: &'a [EdgeTest],
    graphs: &'a [ConnectivityGraph],
}

#[derive(Serialize)]
struct BandCounts {
    band: String,
    edges_per_group: Vec<usize>,
    unique_to_group1: usize,
    unique_to_group2: usize,
    welch_rejections: usize,
}

#[derive(Serialize)]
struct GraphSummary {
    alpha: f64,
    magnitude_quantile: f64,
    welch_alpha: f64,
    bands: Vec<BandCounts>,
}

/// Fits of one band ordered by target channel. Any missing or failed fit
/// makes the bundle incomplete.
pub fn load_band_fits(bundle: &Path, summary: &FitSummary, band: &str) -> Result<Vec<MixedVarFit>> {
    summary
        .channels
        .iter()
        .map(|channel| {
            let status = summary
                .fits
                .iter()
                .find(|s| s.band == band && &s.target == channel)
                .ok_or_else(|| CliError::Data(format!("incomplete bundle: no entry for {band}/{channel}")))?;
            let file = status.file.as_ref().ok_or_else(|| {
                CliError::Data(format!(
                    "incomplete bundle: fit {band}/{channel} failed ({})",
                    status.error.as_deref().unwrap_or("no file")
                ))
            })?;
            let head: FitFileHead = io::read_json(&bundle.join(file))?;
            Ok(head.fit)
        })
        .collect()
}

fn welch_csv(rows: &[WelchRow], nodes: &[String]) -> String {
    let mut out = String::from("target,source,lag,diff,se_diff,t,df,p,p_adjusted,reject\n");
    for row in rows {
        let t = &row.test;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            nodes[t.target],
            nodes[t.source],
            t.lag,
            fmt_f64(t.diff),
            fmt_f64(t.se_diff),
            fmt_f64(t.t),
            fmt_f64(t.df),
            fmt_f64(t.p),
            fmt_f64(row.p_adjusted),
            row.reject
        ));
    }
    out
}

pub fn run(cli: &Cli, args: &GraphArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(CliError::Usage(format!("--alpha must lie in [0, 1], got {}", args.alpha)));
    }
    if !(0.0..1.0).contains(&args.quantile) {
        return Err(CliError::Usage(format!("--quantile must lie in [0, 1), got {}", args.quantile)));
    }
    if !(0.0..=1.0).contains(&args.welch_alpha) {
        return Err(CliError::Usage(format!("--welch-alpha must lie in [0, 1], got {}", args.welch_alpha)));
    }
    let bundle = args.fits.clone().unwrap_or_else(|| cli.out.join("fits"));
    let summary = FitSummary::read(&bundle)?;
    let root = cli.out.join("graphs");
    let mut counts = Vec::with_capacity(summary.bands.len());
    for band in &summary.bands {
        let name = band.name.as_str();
        let fits = load_band_fits(&bundle, &summary, name)?;
        let dir = root.join(name);
        let inf = granger_edges(&fits, args.alpha, args.quantile).context(|| format!("band `{name}` edges"))?;
        for g in &inf.graphs {
            io::write_text(&dir.join(format!("group{}.dot", g.group)), &render::graph_dot(g))?;
        }
        io::write_json(
            &dir.join("edges.json"),
            &EdgesFile {
                band: name,
                alpha: args.alpha,
                magnitude_quantile: args.quantile,
                nodes: &inf.nodes,
                tests: &inf.tests,
                graphs: &inf.graphs,
            },
        )?;

        let diff = diff_graphs(&inf.graphs[0], &inf.graphs[1]).context(|| format!("band `{name}` difference"))?;
        io::write_json(&dir.join("difference.json"), &diff)?;
        io::write_text(&dir.join("difference.dot"), &render::difference_dot(&diff))?;

        let heat = random_sd_heatmaps(&fits).context(|| format!("band `{name}` heatmaps"))?;
        for k in 0..summary.lag {
            for (g, tau) in heat.tau.iter().enumerate() {
                let csv = io::matrix_csv(&heat.nodes, &heat.nodes, &tau[k]);
                io::write_text(&dir.join(format!("tau_group{}_lag{}.csv", g + 1, k + 1)), &csv)?;
            }
            let csv = io::matrix_csv(&heat.nodes, &heat.nodes, &heat.difference[k]);
            io::write_text(&dir.join(format!("tau_difference_lag{}.csv", k + 1)), &csv)?;
            if args.svg {
                let titles: Vec<String> = (1..=heat.tau.len()).map(|g| format!("group {g}")).collect();
                let mut panels: Vec<Panel<'_>> = heat
                    .tau
                    .iter()
                    .zip(&titles)
                    .map(|(tau, title)| Panel {
                        title,
                        values: &tau[k],
                    })
                    .collect();
                panels.push(Panel {
                    title: "|difference|",
                    values: &heat.difference[k],
                });
                let svg = render::heatmap_svg(&format!("{name} random-effect SD, lag {}", k + 1), &heat.nodes, &panels);
                io::write_text(&dir.join(format!("heatmap_lag{}.svg", k + 1)), &svg)?;
            }
        }
        io::write_json(&dir.join("heatmaps.json"), &heat)?;

        let welch = welch_table(&fits, args.welch_alpha).context(|| format!("band `{name}` Welch table"))?;
        io::write_text(&dir.join("welch.csv"), &welch_csv(&welch, &inf.nodes))?;

        log::info!(
            "{name}: {} edges, {} / {} group-specific",
            inf.graphs.iter().map(|g| g.edges.len()).sum::<usize>(),
            diff.unique_to_group1.len(),
            diff.unique_to_group2.len()
        );
        counts.push(BandCounts {
            band: name.to_string(),
            edges_per_group: inf.graphs.iter().map(|g| g.edges.len()).collect(),
            unique_to_group1: diff.unique_to_group1.len(),
            unique_to_group2: diff.unique_to_group2.len(),
            welch_rejections: welch.iter().filter(|w| w.reject).count(),
        });
    }
    io::write_json(
        &root.join("summary.json"),
        &GraphSummary {
            alpha: args.alpha,
            magnitude_quantile: args.quantile,
            welch_alpha: args.welch_alpha,
            bands: counts,
        },
    )
}
