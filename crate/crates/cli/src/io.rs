//! Dataset manifests, subject CSVs and deterministic JSON/CSV writers.
//!
//! A manifest is
//! `{ "sampling_rate_hz": f, "channels": [..], "subjects": [{ "id", "group", "csv" }] }`
//! with CSV paths relative to the manifest's directory. A subject CSV has
//! one header row naming the channels in manifest order and one sample per
//! row after it.

use std::fs;
use std::path::{Path, PathBuf};

use mespec_core::{MultiChannelSeries, StudyDataset, SubjectRecord};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CoreContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sampling_rate_hz: f64,
    pub channels: Vec<String>,
    pub subjects: Vec<ManifestSubject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSubject {
    pub id: String,
    pub group: usize,
    pub csv: String,
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: invalid manifest: {e}", path.display())))
}

/// Reads a manifest and every subject CSV it references.
pub fn load_manifest(path: &Path) -> Result<StudyDataset> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let subjects = manifest
        .subjects
        .iter()
        .map(|s| {
            let csv = base.join(&s.csv);
            let series = read_subject_csv(&csv, &s.id, &manifest.channels, manifest.sampling_rate_hz)?;
            SubjectRecord::new(&s.id, s.group, series).context(|| format!("subject `{}`", s.id))
        })
        .collect::<Result<Vec<_>>>()?;
    StudyDataset::new(subjects).context(|| format!("{}", path.display()))
}

/// Reads one subject CSV, checking the header against `channels`.
///
/// Non-finite values are reported with their 1-based data row.
pub fn read_subject_csv(path: &Path, subject: &str, channels: &[String], sampling_rate_hz: f64) -> Result<MultiChannelSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != channels {
        let missing: Vec<&String> = channels.iter().filter(|c| !header.contains(c)).collect();
        return Err(CliError::Data(format!(
            "{}: channel mismatch for subject `{subject}`: header {header:?}, manifest {channels:?}{}",
            path.display(),
            if missing.is_empty() { String::new() } else { format!(", missing {missing:?}") }
        )));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); channels.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = i + 1;
        if record.len() != channels.len() {
            return Err(CliError::Data(format!(
                "{}: row {row} has {} fields, expected {}",
                path.display(),
                record.len(),
                channels.len()
            )));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Data(format!("{}: row {row}, channel `{}`: cannot parse `{field}`", path.display(), channels[c]))
            })?;
            if !v.is_finite() {
                return Err(CliError::core(
                    format!("{}", path.display()),
                    mespec_core::Error::NonFinite {
                        subject: subject.to_string(),
                        channel: channels[c].clone(),
                        row,
                    },
                ));
            }
            columns[c].push(v);
        }
    }
    MultiChannelSeries::from_columns(columns, channels.to_vec(), sampling_rate_hz).context(|| format!("{}", path.display()))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return CliError::io(path, io);
        }
        unreachable!("checked io error");
    }
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

/// Writes a series in the subject CSV format. Values use the shortest
/// decimal that parses back to the same `f64`.
pub fn write_series_csv(path: &Path, series: &MultiChannelSeries) -> Result<()> {
    let mut out = String::with_capacity(series.len() * series.n_channels() * 20);
    out.push_str(&series.channel_names().join(","));
    out.push('\n');
    let samples = series.samples();
    for t in 0..series.len() {
        for r in 0..series.n_channels() {
            if r > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(samples[(t, r)]));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Writes `dataset` as `<dir>/<file_name>` plus one `<dir>/<id>.csv` per
/// subject, and returns the manifest path.
pub fn save_manifest(dataset: &StudyDataset, dir: &Path, file_name: &str) -> Result<PathBuf> {
    let mut subjects = Vec::with_capacity(dataset.subjects().len());
    for s in dataset.subjects() {
        let csv = format!("{}.csv", s.subject_id);
        write_series_csv(&dir.join(&csv), &s.series)?;
        subjects.push(ManifestSubject {
            id: s.subject_id.clone(),
            group: s.group_index,
            csv,
        });
    }
    let manifest = Manifest {
        sampling_rate_hz: dataset.sampling_rate_hz(),
        channels: dataset.channel_names().to_vec(),
        subjects,
    };
    let path = dir.join(file_name);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Shortest decimal that round-trips; non-finite values as `NaN`, `inf`, `-inf`.
pub fn fmt_f64(v: f64) -> String {
    v.to_string()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with a trailing newline. Struct fields keep declaration
/// order and maps are ordered, so equal values give equal bytes.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// A numeric matrix as CSV with a header row of column names and a first
/// column of row names.
pub fn matrix_csv(row_names: &[String], col_names: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = String::from("target");
    for c in col_names {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (name, row) in row_names.iter().zip(rows) {
        out.push_str(name);
        for v in row {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}
