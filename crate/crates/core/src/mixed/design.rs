use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::series::{StudyDataset, GROUP_COUNT};

/// Identifies one fixed-effect column: group `g` (1-based), source channel
/// `r'` (0-based) at lag `k` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ColumnLabel {
    pub group: usize,
    pub source: usize,
    pub lag: usize,
}

impl ColumnLabel {
    /// Position of this regressor within a subject's `R * p` lag block.
    pub fn regressor_index(&self, n_channels: usize) -> usize {
        (self.lag - 1) * n_channels + self.source
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSubject {
    pub subject_id: String,
    /// 0-based group.
    pub group: usize,
    pub rows: Range<usize>,
}

/// Stacked regression for one target channel.
///
/// Fixed and random designs share regressors, so only the `N x (R p)` lag
/// block is stored: the fixed column `(g, r', k)` equals regressor
/// `(r', k)` on rows of group-`g` subjects and zero elsewhere; subject `i`'s
/// random block equals the regressors on its own rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDesign {
    pub target_channel: usize,
    pub channel_names: Vec<String>,
    pub lag: usize,
    pub n_groups: usize,
    pub response: Vec<f64>,
    pub regressors: DMatrix<f64>,
    pub subjects: Vec<DesignSubject>,
    pub fixed_columns: Vec<ColumnLabel>,
}

impl MixedDesign {
    pub fn n_obs(&self) -> usize {
        self.response.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    /// Regressors per subject, `R * p`.
    pub fn block_size(&self) -> usize {
        self.regressors.ncols()
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed_columns.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn target_name(&self) -> &str {
        &self.channel_names[self.target_channel]
    }

    pub fn group_of_row(&self, row: usize) -> usize {
        self.subjects
            .iter()
            .find(|s| s.rows.contains(&row))
            .map(|s| s.group)
            .expect("row out of range")
    }

    pub fn fixed_entry(&self, row: usize, col: usize) -> f64 {
        let label = self.fixed_columns[col];
        if self.group_of_row(row) + 1 == label.group {
            self.regressors[(row, label.regressor_index(self.n_channels()))]
        } else {
            0.0
        }
    }

    /// Dense `N x n_fixed` fixed-effects design. Intended for small
    /// instances and checks.
    pub fn fixed_design_dense(&self) -> DMatrix<f64> {
        let r = self.n_channels();
        let mut x = DMatrix::zeros(self.n_obs(), self.n_fixed());
        for s in &self.subjects {
            for (c, label) in self.fixed_columns.iter().enumerate() {
                if label.group == s.group + 1 {
                    let src = label.regressor_index(r);
                    for row in s.rows.clone() {
                        x[(row, c)] = self.regressors[(row, src)];
                    }
                }
            }
        }
        x
    }

    /// Dense `N x (n_subjects R p)` random-effects design, subject-major.
    pub fn random_design_dense(&self) -> DMatrix<f64> {
        let q = self.block_size();
        let mut z = DMatrix::zeros(self.n_obs(), self.n_subjects() * q);
        for (i, s) in self.subjects.iter().enumerate() {
            for row in s.rows.clone() {
                for j in 0..q {
                    z[(row, i * q + j)] = self.regressors[(row, j)];
                }
            }
        }
        z
    }

    /// Copy with the named fixed columns dropped; random effects unchanged.
    pub fn without_fixed(&self, excluded: &[ColumnLabel]) -> Result<MixedDesign> {
        for e in excluded {
            if !self.fixed_columns.contains(e) {
                return Err(Error::invalid(format!(
                    "fixed column (group {}, source {}, lag {}) not in design",
                    e.group, e.source, e.lag
                )));
            }
        }
        let mut out = self.clone();
        out.fixed_columns.retain(|c| !excluded.contains(c));
        Ok(out)
    }

    pub fn column_index(&self, label: &ColumnLabel) -> Option<usize> {
        self.fixed_columns.iter().position(|c| c == label)
    }
}

/// Stacks every subject's lagged regression for `target_channel`.
///
/// Rows are ordered by subject (dataset order), then time.
pub fn build_design(dataset: &StudyDataset, target_channel: usize, p: usize) -> Result<MixedDesign> {
    build_design_with_groups(dataset, target_channel, p, GROUP_COUNT)
}

pub fn build_design_with_groups(dataset: &StudyDataset, target_channel: usize, p: usize, n_groups: usize) -> Result<MixedDesign> {
    let r = dataset.n_channels();
    if target_channel >= r {
        return Err(Error::DimensionMismatch(format!(
            "target channel {target_channel} out of range for {r} channels"
        )));
    }
    if p == 0 {
        return Err(Error::invalid("lag order must be positive"));
    }
    let mut counts = vec![0usize; n_groups];
    for s in dataset.subjects() {
        if s.group_index == 0 || s.group_index > n_groups {
            return Err(Error::invalid(format!("subject `{}` has group {}", s.subject_id, s.group_index)));
        }
        counts[s.group_index - 1] += 1;
        let t = s.series.len();
        if t <= r * p + 1 {
            return Err(Error::TooShort {
                len: t,
                required: r * p + 1,
            });
        }
    }
    if let Some(g) = counts.iter().position(|c| *c == 0) {
        return Err(Error::EmptyGroup(g + 1));
    }

    let q = r * p;
    let n: usize = dataset.subjects().iter().map(|s| s.series.len() - p).sum();
    let mut response = Vec::with_capacity(n);
    let mut regressors = DMatrix::zeros(n, q);
    let mut subjects = Vec::with_capacity(dataset.subjects().len());
    let mut row = 0;
    for s in dataset.subjects() {
        let t = s.series.len();
        let start = row;
        let target = s.series.channel(target_channel);
        response.extend_from_slice(&target[p..]);
        for k in 1..=p {
            for src in 0..r {
                let x = s.series.channel(src);
                let col = (k - 1) * r + src;
                let mut dst = regressors.view_mut((start, col), (t - p, 1));
                for (d, v) in dst.iter_mut().zip(&x[p - k..t - k]) {
                    *d = *v;
                }
            }
        }
        row += t - p;
        subjects.push(DesignSubject {
            subject_id: s.subject_id.clone(),
            group: s.group_index - 1,
            rows: start..row,
        });
    }
    let fixed_columns = (1..=n_groups)
        .flat_map(|g| (1..=p).flat_map(move |k| (0..r).map(move |src| ColumnLabel { group: g, source: src, lag: k })))
        .collect();
    Ok(MixedDesign {
        target_channel,
        channel_names: dataset.channel_names().to_vec(),
        lag: p,
        n_groups,
        response,
        regressors,
        subjects,
        fixed_columns,
    })
}
