//! `filter`: band decomposition of every subject.
//!
//! Writes `<out>/<subject>/<band>.csv` and one manifest per band,
//! `<out>/<band>.json`, that points at those files.

use mespec_core::filter::decompose_bands;
use rayon::prelude::*;

use crate::args::{Cli, FilterArgs};
use crate::error::{CoreContext, Result};
use crate::io::{self, Manifest, ManifestSubject};

pub fn run(cli: &Cli, args: &FilterArgs) -> Result<()> {
    let ds = super::load_dataset(cli)?;
    super::check_names(&ds)?;
    let bands = super::resolve_bands(&args.bands, ds.sampling_rate_hz())?;
    super::ensure_dir(&cli.out)?;
    ds.subjects().par_iter().try_for_each(|s| -> Result<()> {
        let dec = decompose_bands(&s.series, &bands).context(|| format!("subject `{}`", s.subject_id))?;
        for (band, series) in dec.iter() {
            io::write_series_csv(&cli.out.join(&s.subject_id).join(format!("{}.csv", band.name)), series)?;
        }
        log::info!("filtered {}", s.subject_id);
        Ok(())
    })?;
    for band in &bands {
        let manifest = Manifest {
            sampling_rate_hz: ds.sampling_rate_hz(),
            channels: ds.channel_names().to_vec(),
            subjects: ds
                .subjects()
                .iter()
                .map(|s| ManifestSubject {
                    id: s.subject_id.clone(),
                    group: s.group_index,
                    csv: format!("{}/{}.csv", s.subject_id, band.name),
                })
                .collect(),
        };
        io::write_json(&cli.out.join(format!("{}.json", band.name)), &manifest)?;
    }
    Ok(())
}
