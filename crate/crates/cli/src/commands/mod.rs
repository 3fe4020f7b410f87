//! One module per subcommand plus the pieces they share.

pub mod filter;
pub mod fit;
pub mod graph;
pub mod lagselect;
pub mod simulate;

use std::path::Path;

use mespec_core::series::{replace_outliers, standardize};
use mespec_core::{BandDefinition, StudyDataset};

use crate::args::{BandArgs, Cli};
use crate::error::{CliError, CoreContext, Result};
use crate::io;

pub(crate) fn load_dataset(cli: &Cli) -> Result<StudyDataset> {
    let path = cli
        .manifest
        .as_deref()
        .ok_or_else(|| CliError::Usage("this command needs --manifest".into()))?;
    let ds = io::load_manifest(path)?;
    log::info!(
        "{}: {} subjects, {} channels at {} Hz",
        path.display(),
        ds.subjects().len(),
        ds.n_channels(),
        ds.sampling_rate_hz()
    );
    Ok(ds)
}

/// Parses `lo:<hz>,hi:<hz>,name:<name>` (keys in any order).
pub fn parse_band_def(text: &str) -> Result<BandDefinition> {
    let (mut lo, mut hi, mut name) = (None, None, None);
    for part in text.split(',') {
        let (key, value) = part
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("band definition `{text}`: expected key:value pairs")))?;
        let number = || {
            value
                .trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("band definition `{text}`: `{value}` is not a number")))
        };
        match key.trim() {
            "lo" => lo = Some(number()?),
            "hi" => hi = Some(number()?),
            "name" => name = Some(value.trim().to_string()),
            other => return Err(CliError::Usage(format!("band definition `{text}`: unknown key `{other}`"))),
        }
    }
    match (lo, hi, name) {
        (Some(lo), Some(hi), Some(name)) => Ok(BandDefinition::new(name, lo, hi)),
        _ => Err(CliError::Usage(format!("band definition `{text}` needs lo, hi and name"))),
    }
}

/// Canonical bands named in `--bands` followed by `--band-def` bands, each
/// checked against the Nyquist frequency.
pub fn resolve_bands(args: &BandArgs, fs_hz: f64) -> Result<Vec<BandDefinition>> {
    let mut bands = if args.bands.is_empty() && args.band_def.is_empty() {
        BandDefinition::canonical()
    } else {
        args.bands
            .iter()
            .map(|name| {
                BandDefinition::canonical_by_name(name.trim())
                    .ok_or_else(|| CliError::Usage(format!("unknown band `{name}`; use --band-def for custom edges")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    for def in &args.band_def {
        bands.push(parse_band_def(def)?);
    }
    for (i, b) in bands.iter().enumerate() {
        if bands[..i].iter().any(|o| o.name == b.name) {
            return Err(CliError::Usage(format!("band `{}` listed twice", b.name)));
        }
        if !is_safe_name(&b.name) {
            return Err(CliError::Usage(format!("band name `{}` is not usable as a file name", b.name)));
        }
        b.validate(fs_hz).context(|| "band definition".into())?;
    }
    Ok(bands)
}

/// Outlier clipping, then z-scoring, per subject and channel.
pub fn preprocess(ds: &StudyDataset, outlier_k: f64) -> Result<StudyDataset> {
    if !(outlier_k > 0.0) || !outlier_k.is_finite() {
        return Err(CliError::Usage(format!("--outlier-k must be positive, got {outlier_k}")));
    }
    ds.map_series(|s| standardize(&replace_outliers(&s.series, outlier_k)?))
        .context(|| "preprocessing".into())
}

/// Letters, digits, `-`, `_` and `.` (not leading), so names map to file
/// names unchanged.
pub fn is_safe_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub(crate) fn check_names(ds: &StudyDataset) -> Result<()> {
    for name in ds.channel_names() {
        if !is_safe_name(name) {
            return Err(CliError::Data(format!("channel name `{name}` is not usable as a file name")));
        }
    }
    for s in ds.subjects() {
        if !is_safe_name(&s.subject_id) {
            return Err(CliError::Data(format!("subject id `{}` is not usable as a file name", s.subject_id)));
        }
    }
    Ok(())
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}
