//! Explains why a fixed prediction model performs differently in a source
//! and a target domain.
//!
//! The aggregate decomposition splits the performance gap into a baseline
//! shift (`W`), a conditional covariate shift (`Z | W`) and a conditional
//! outcome shift (`Y | W, Z`). The detailed decomposition attributes the
//! covariate and outcome parts to individual variables in `Z` with Shapley
//! values. Every quantity comes with a debiased point estimate and an
//! influence-function confidence interval.

pub mod aggregate;
pub mod covariate;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod ingest;
pub mod learners;
pub mod loss;
pub mod matrix;
pub mod nuisance;
pub mod outcome;
pub mod pipeline;
pub mod render;
pub mod report;
pub mod shapley;
pub mod simgen;
pub mod subset;

pub use dataset::{Dataset, SplitPlan};
pub use error::{Error, Result};
pub use ingest::{run, ColumnMap, RunConfig};
pub use matrix::Matrix;
pub use pipeline::{decompose, EstimationOptions, Target};
pub use report::DecompositionReport;
pub use subset::Subset;
