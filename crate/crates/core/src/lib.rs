//! Small-study-effect testing for multivariate meta-analysis.
//!
//! The crate provides the multivariate score test ([`msset::run_msset`]), the
//! univariate comparators (Egger, Begg, Bonferroni), the smoothed-variance
//! variant for binary outcomes, and a selection-model Monte Carlo harness
//! for size and power experiments.

pub mod batch;
pub mod error;
pub mod experiment;
pub mod heterogeneity;
pub mod io;
pub mod model;
pub mod msset;
pub mod report;
pub mod seeds;
pub mod selection;
pub mod special;
pub mod univariate;

pub use error::{MetaError, Result};
pub use model::{MetaDataset, ModelParams, OutcomeMeasurement, StudyRecord};
pub use msset::{run_msset, MssetOptions, MssetResult};
