//! DOT graphs and a minimal SVG heatmap renderer.

use std::fmt::Write;

use mespec_core::inference::{ConnectivityGraph, EdgeKey, GroupDifferenceGraph};

use crate::io::fmt_f64;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Directed graph with one `source -> target` edge per significant
/// coefficient, carrying `coef`, `p` and `lag` attributes.
pub fn graph_dot(graph: &ConnectivityGraph) -> String {
    let mut out = String::new();
    writeln!(out, "digraph {} {{", quote(&format!("{}_group{}", graph.band, graph.group))).unwrap();
    writeln!(out, "  label={};", quote(&format!("{} group {}", graph.band, graph.group))).unwrap();
    for n in &graph.nodes {
        writeln!(out, "  {};", quote(n)).unwrap();
    }
    for e in &graph.edges {
        writeln!(
            out,
            "  {} -> {} [coef={}, p={}, lag={}];",
            quote(&graph.nodes[e.source]),
            quote(&graph.nodes[e.target]),
            quote(&fmt_f64(e.estimate)),
            quote(&fmt_f64(e.p_raw)),
            e.lag
        )
        .unwrap();
    }
    out.push_str("}\n");
    out
}

/// Edges present in only one group: group 1 in green, group 2 in red.
pub fn difference_dot(diff: &GroupDifferenceGraph) -> String {
    let mut out = String::new();
    writeln!(out, "digraph {} {{", quote(&format!("{}_difference", diff.band))).unwrap();
    writeln!(out, "  label={};", quote(&format!("{} group differences", diff.band))).unwrap();
    for n in &diff.nodes {
        writeln!(out, "  {};", quote(n)).unwrap();
    }
    let mut edge = |k: &EdgeKey, group: usize, color: &str| {
        writeln!(
            out,
            "  {} -> {} [group={group}, lag={}, color={color}];",
            quote(&diff.nodes[k.source]),
            quote(&diff.nodes[k.target]),
            k.lag
        )
        .unwrap();
    };
    for k in &diff.unique_to_group1 {
        edge(k, 1, "green");
    }
    for k in &diff.unique_to_group2 {
        edge(k, 2, "red");
    }
    out.push_str("}\n");
    out
}

/// One panel of an SVG figure.
pub struct Panel<'a> {
    pub title: &'a str,
    pub values: &'a [Vec<f64>],
}

const CELL: f64 = 24.0;
const LABEL: f64 = 48.0;
const GAP: f64 = 32.0;

/// White-to-blue linear scale on `[0, max]`.
fn color(v: f64, max: f64) -> String {
    let s = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
    let mix = |hi: f64, lo: f64| (hi + (lo - hi) * s).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(255.0, 8.0), mix(255.0, 48.0), mix(255.0, 107.0))
}

/// Side-by-side square heatmaps (rows are targets, columns sources) sharing
/// one color scale.
pub fn heatmap_svg(title: &str, labels: &[String], panels: &[Panel<'_>]) -> String {
    let n = labels.len() as f64;
    let side = n * CELL;
    let width = panels.len() as f64 * (LABEL + side + GAP) + GAP;
    let height = LABEL + side + 60.0;
    let max = panels
        .iter()
        .flat_map(|p| p.values.iter().flatten())
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(out, r#"<text x="{GAP}" y="16" font-size="13">{} (max {})</text>"#, escape(title), fmt_f64(max)).unwrap();
    for (pi, panel) in panels.iter().enumerate() {
        let x0 = GAP + pi as f64 * (LABEL + side + GAP) + LABEL;
        let y0 = LABEL;
        writeln!(out, r#"<text x="{x0}" y="{}">{}</text>"#, y0 - 22.0, escape(panel.title)).unwrap();
        for (i, row) in panel.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(
                    out,
                    r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}"><title>{} &lt;- {}: {}</title></rect>"#,
                    x0 + j as f64 * CELL,
                    y0 + i as f64 * CELL,
                    color(*v, max),
                    escape(&labels[i]),
                    escape(&labels[j]),
                    fmt_f64(*v)
                )
                .unwrap();
            }
        }
        for (k, l) in labels.iter().enumerate() {
            let c = k as f64 * CELL + CELL / 2.0;
            writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 4.0, y0 + c + 3.0, escape(l)).unwrap();
            writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, x0 + c, y0 - 6.0, escape(l)).unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_scale_endpoints() {
        assert_eq!(color(0.0, 1.0), "#ffffff");
        assert_eq!(color(1.0, 1.0), "#08306b");
        assert_eq!(color(5.0, 0.0), "#ffffff");
    }

    #[test]
    fn quoting_escapes() {
        assert_eq!(quote(r#"a"b"#), r#""a\"b""#);
    }
}
