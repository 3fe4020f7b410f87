//! Domain types for multichannel recordings and the per-channel
//! preprocessing applied before any model fitting.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::stats;

/// Number of cohorts the data model accepts. The mixed-model engine itself is
/// written against an arbitrary group count.
pub const GROUP_COUNT: usize = 2;

/// Scale factor turning the median absolute deviation into a consistent
/// estimate of the standard deviation under normality.
pub const MAD_SCALE: f64 = 1.4826;

/// Default clipping threshold, in scaled-MAD units.
pub const DEFAULT_OUTLIER_K: f64 = 4.0;

/// A `T x R` block of samples with channel names and a sampling rate.
///
/// Samples are stored column-major, so each channel is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSeries {
    samples: DMatrix<f64>,
    channel_names: Vec<String>,
    sampling_rate_hz: f64,
}

impl MultiChannelSeries {
    pub fn new(samples: DMatrix<f64>, channel_names: Vec<String>, sampling_rate_hz: f64) -> Result<Self> {
        let (t, r) = samples.shape();
        if t < 2 {
            return Err(Error::TooShort { len: t, required: 1 });
        }
        if r == 0 {
            return Err(Error::invalid("series must have at least one channel"));
        }
        if channel_names.len() != r {
            return Err(Error::DimensionMismatch(format!(
                "{} channel names for {} columns",
                channel_names.len(),
                r
            )));
        }
        for (i, name) in channel_names.iter().enumerate() {
            if channel_names[..i].contains(name) {
                return Err(Error::invalid(format!("duplicate channel name `{name}`")));
            }
        }
        if !(sampling_rate_hz > 0.0) || !sampling_rate_hz.is_finite() {
            return Err(Error::invalid(format!("sampling rate must be positive, got {sampling_rate_hz}")));
        }
        let series = Self {
            samples,
            channel_names,
            sampling_rate_hz,
        };
        series.check_finite("")?;
        Ok(series)
    }

    /// Builds a series from one vector per channel.
    pub fn from_columns(columns: Vec<Vec<f64>>, channel_names: Vec<String>, sampling_rate_hz: f64) -> Result<Self> {
        let r = columns.len();
        let t = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != t) {
            return Err(Error::DimensionMismatch("channels have different lengths".into()));
        }
        let data: Vec<f64> = columns.into_iter().flatten().collect();
        Self::new(DMatrix::from_vec(t, r, data), channel_names, sampling_rate_hz)
    }

    /// Reports the first non-finite value, tagged with `subject`.
    pub fn check_finite(&self, subject: &str) -> Result<()> {
        for r in 0..self.n_channels() {
            if let Some(row) = self.channel(r).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    subject: subject.to_string(),
                    channel: self.channel_names[r].clone(),
                    row,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn channel(&self, r: usize) -> &[f64] {
        let t = self.len();
        &self.samples.as_slice()[r * t..(r + 1) * t]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }

    /// Same metadata, new samples (one vector per channel).
    pub(crate) fn with_columns(&self, columns: Vec<Vec<f64>>) -> Self {
        let t = columns[0].len();
        let r = columns.len();
        Self {
            samples: DMatrix::from_vec(t, r, columns.into_iter().flatten().collect()),
            channel_names: self.channel_names.clone(),
            sampling_rate_hz: self.sampling_rate_hz,
        }
    }

    pub(crate) fn map_channels<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&str, &[f64]) -> Result<Vec<f64>>,
    {
        let cols = (0..self.n_channels())
            .map(|r| f(&self.channel_names[r], self.channel(r)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.with_columns(cols))
    }

    /// Reverses the time axis.
    pub fn reversed(&self) -> Self {
        self.with_columns(
            (0..self.n_channels())
                .map(|r| self.channel(r).iter().rev().copied().collect())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// 1-based cohort label.
    pub group_index: usize,
    pub series: MultiChannelSeries,
}

impl SubjectRecord {
    pub fn new(subject_id: impl Into<String>, group_index: usize, series: MultiChannelSeries) -> Result<Self> {
        let subject_id = subject_id.into();
        if !(1..=GROUP_COUNT).contains(&group_index) {
            return Err(Error::invalid(format!(
                "subject `{subject_id}`: group must be in 1..={GROUP_COUNT}, got {group_index}"
            )));
        }
        series.check_finite(&subject_id)?;
        Ok(Self {
            subject_id,
            group_index,
            series,
        })
    }
}

/// Subjects sharing one channel set and sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyDataset {
    subjects: Vec<SubjectRecord>,
    channel_names: Vec<String>,
    sampling_rate_hz: f64,
}

impl StudyDataset {
    pub fn new(subjects: Vec<SubjectRecord>) -> Result<Self> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::invalid("dataset has no subjects"))?;
        let channel_names = first.series.channel_names().to_vec();
        let fs = first.series.sampling_rate_hz();
        for s in &subjects {
            if s.series.channel_names() != channel_names.as_slice() {
                return Err(Error::DimensionMismatch(format!(
                    "subject `{}` has channels {:?}, expected {:?}",
                    s.subject_id,
                    s.series.channel_names(),
                    channel_names
                )));
            }
            if s.series.sampling_rate_hz() != fs {
                return Err(Error::invalid(format!(
                    "subject `{}` sampled at {} Hz, expected {} Hz",
                    s.subject_id,
                    s.series.sampling_rate_hz(),
                    fs
                )));
            }
        }
        for (i, s) in subjects.iter().enumerate() {
            if subjects[..i].iter().any(|o| o.subject_id == s.subject_id) {
                return Err(Error::invalid(format!("duplicate subject id `{}`", s.subject_id)));
            }
        }
        Ok(Self {
            subjects,
            channel_names,
            sampling_rate_hz: fs,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn group_sizes(&self) -> [usize; GROUP_COUNT] {
        let mut sizes = [0; GROUP_COUNT];
        for s in &self.subjects {
            sizes[s.group_index - 1] += 1;
        }
        sizes
    }

    /// Applies `f` to every subject's series, keeping ids and groups.
    pub fn map_series<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&SubjectRecord) -> Result<MultiChannelSeries>,
    {
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                Ok(SubjectRecord {
                    subject_id: s.subject_id.clone(),
                    group_index: s.group_index,
                    series: f(s)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(subjects)
    }
}

/// A named frequency band `[low_hz, high_hz]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BandDefinition {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandDefinition {
    pub fn new(name: impl Into<String>, low_hz: f64, high_hz: f64) -> Self {
        Self {
            name: name.into(),
            low_hz,
            high_hz,
        }
    }

    /// Checks `0 < low < high < fs / 2`.
    pub fn validate(&self, fs_hz: f64) -> Result<()> {
        let ok = self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < fs_hz / 2.0;
        if ok && !self.name.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidBand {
                name: self.name.clone(),
                low_hz: self.low_hz,
                high_hz: self.high_hz,
                fs_hz,
            })
        }
    }

    /// Delta, theta, alpha, beta and gamma with the conventional EEG edges.
    pub fn canonical() -> Vec<BandDefinition> {
        vec![
            Self::new("delta", 0.5, 4.0),
            Self::new("theta", 4.0, 8.0),
            Self::new("alpha", 8.0, 12.0),
            Self::new("beta", 12.0, 30.0),
            Self::new("gamma", 30.0, 50.0),
        ]
    }

    pub fn canonical_by_name(name: &str) -> Option<BandDefinition> {
        Self::canonical().into_iter().find(|b| b.name == name)
    }
}

/// Z-scores every channel: mean 0, standard deviation 1 (denominator `T - 1`).
pub fn standardize(series: &MultiChannelSeries) -> Result<MultiChannelSeries> {
    series.map_channels(|name, x| {
        let m = stats::mean(x);
        let sd = stats::sample_variance(x).sqrt();
        if !(sd > 1e-12 * m.abs()) || sd == 0.0 || !sd.is_finite() {
            return Err(Error::DegenerateChannel {
                channel: name.to_string(),
                reason: "zero variance".into(),
            });
        }
        Ok(x.iter().map(|v| (v - m) / sd).collect())
    })
}

/// Clips samples further than `k` scaled MADs from the channel median to the
/// nearer bound; samples within the bound are untouched.
pub fn replace_outliers(series: &MultiChannelSeries, k: f64) -> Result<MultiChannelSeries> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::invalid(format!("outlier threshold must be positive, got {k}")));
    }
    series.map_channels(|name, x| {
        let (lo, hi) = outlier_bounds(x, k).ok_or_else(|| Error::DegenerateChannel {
            channel: name.to_string(),
            reason: "median absolute deviation is zero".into(),
        })?;
        Ok(x.iter().map(|&v| if v < lo { lo } else if v > hi { hi } else { v }).collect())
    })
}

/// `(median - k * MAD_scaled, median + k * MAD_scaled)`, or `None` when the
/// MAD vanishes.
pub fn outlier_bounds(x: &[f64], k: f64) -> Option<(f64, f64)> {
    let med = stats::median(x);
    let dev: Vec<f64> = x.iter().map(|v| (v - med).abs()).collect();
    let mad = MAD_SCALE * stats::median(&dev);
    if !(mad > 0.0) {
        return None;
    }
    Some((med - k * mad, med + k * mad))
}
