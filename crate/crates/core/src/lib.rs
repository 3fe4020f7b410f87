//! Mixed-effects spectral vector autoregression.
//!
//! The crate is the algorithmic half of the pipeline and performs no IO:
//!
//! - [`series`]: multichannel series, study datasets, standardization and
//!   robust outlier clipping.
//! - [`filter`]: Butterworth band-pass design and zero-phase application,
//!   band decomposition.
//! - [`var`]: per-subject VAR fits (least squares and LASSO + refit),
//!   information criteria, lag selection, companion spectral radius.
//! - [`mixed`]: the mixed-effects VAR regression for one target channel,
//!   profiled REML/ML deviance, optimization, Satterthwaite inference.
//! - [`inference`]: Granger edges, Welch group comparison, likelihood ratio
//!   tests, Bonferroni, graph differences and random-effect heatmaps.
//! - [`sim`]: population generator and the Monte Carlo consistency harness.
//!
//! File formats, the command-line front end and thread-pool sizing live in
//! the companion `mespec` crate.

pub mod error;
pub mod filter;
pub mod inference;
pub mod linalg;
pub mod mixed;
pub mod optim;
pub mod series;
pub mod sim;
pub mod stats;
pub mod var;

pub use error::{Error, Result};
pub use series::{BandDefinition, MultiChannelSeries, StudyDataset, SubjectRecord};
