//! Nuisance-model stack: polynomial GLMs, boosted trees, cross-validated
//! selection, density ratios by classification, and risk binning.

mod cv;
mod gbt;
mod poly;
mod ratio;
mod risk;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use cv::{fit_cv, CvFit, DEFAULT_FOLDS};
pub use gbt::GbtModel;
pub use poly::{monomial_count, sigmoid, PolyModel, MAX_EXPANDED_WIDTH};
pub use ratio::{fit_density_ratio, DensityRatioModel, LearnerConfig, DEFAULT_CLIP};
pub use risk::{bin_risk, bin_risk_one, RiskModel, DEFAULT_BINS};

/// What a learner is asked to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Probability of a binary (or fractional, in `[0,1]`) target.
    Classification,
    /// Conditional mean of a real target.
    Regression,
}

/// Candidate learner configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// Ridge-penalized logistic regression on polynomial features.
    LogisticPoly { degree: usize, lambda: f64 },
    /// Ridge least squares on polynomial features.
    RidgeLinear { degree: usize, lambda: f64 },
    /// Gradient-boosted shallow trees.
    Gbt {
        trees: usize,
        depth: usize,
        learning_rate: f64,
    },
}

impl LearnerSpec {
    /// Whether this candidate applies to `task` with the given targets.
    /// Logistic models also serve as regressors for targets inside `[0,1]`
    /// (e.g. mean 0-1 loss); ridge models never serve as classifiers.
    pub fn supports(&self, task: Task, y: &[f64]) -> bool {
        match (self, task) {
            (LearnerSpec::RidgeLinear { .. }, Task::Classification) => false,
            (LearnerSpec::LogisticPoly { .. }, Task::Regression) => {
                y.iter().all(|&v| (0.0..=1.0).contains(&v))
            }
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LearnerSpec::LogisticPoly { degree, lambda } | LearnerSpec::RidgeLinear { degree, lambda } => {
                degree >= 1 && lambda >= 0.0 && lambda.is_finite()
            }
            LearnerSpec::Gbt {
                trees,
                depth,
                learning_rate,
            } => trees >= 1 && depth >= 1 && learning_rate > 0.0 && learning_rate <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid learner candidate {self}")))
        }
    }

    /// Fits this candidate on all rows.
    pub fn fit(&self, x: &Matrix, y: &[f64], task: Task) -> Result<FittedModel> {
        let logistic = task == Task::Classification;
        Ok(match *self {
            LearnerSpec::LogisticPoly { degree, lambda } => {
                FittedModel::Poly(poly::fit_logistic(x, y, degree, lambda)?)
            }
            LearnerSpec::RidgeLinear { degree, lambda } => {
                FittedModel::Poly(poly::fit_ridge(x, y, degree, lambda)?)
            }
            LearnerSpec::Gbt {
                trees,
                depth,
                learning_rate,
            } => FittedModel::Gbt(gbt::fit_gbt(x, y, trees, depth, learning_rate, logistic)?),
        })
    }
}

impl std::fmt::Display for LearnerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LearnerSpec::LogisticPoly { degree, lambda } => {
                write!(f, "logistic_poly(degree={degree}, lambda={lambda})")
            }
            LearnerSpec::RidgeLinear { degree, lambda } => {
                write!(f, "ridge_linear(degree={degree}, lambda={lambda})")
            }
            LearnerSpec::Gbt {
                trees,
                depth,
                learning_rate,
            } => write!(f, "gbt(trees={trees}, depth={depth}, learning_rate={learning_rate})"),
        }
    }
}

/// Default candidate grid: polynomial GLMs of degree 1-3 with
/// `lambda in {0.01, 0.1, 1}` and boosted trees with 50 or 200 trees of
/// depth 1-3. Each task keeps the candidates that apply to it.
pub fn default_grid() -> Vec<LearnerSpec> {
    let mut grid = Vec::new();
    for degree in 1..=3 {
        for lambda in [0.01, 0.1, 1.0] {
            grid.push(LearnerSpec::LogisticPoly { degree, lambda });
            grid.push(LearnerSpec::RidgeLinear { degree, lambda });
        }
    }
    for trees in [50, 200] {
        for depth in 1..=3 {
            grid.push(LearnerSpec::Gbt {
                trees,
                depth,
                learning_rate: 0.1,
            });
        }
    }
    grid
}

/// Small grid for many-replication experiments: polynomial GLMs of degree
/// 1-3 at `lambda = 0.1` plus one boosted ensemble.
pub fn compact_grid() -> Vec<LearnerSpec> {
    let mut grid = Vec::new();
    for degree in 1..=3 {
        grid.push(LearnerSpec::LogisticPoly { degree, lambda: 0.1 });
        grid.push(LearnerSpec::RidgeLinear { degree, lambda: 0.1 });
    }
    grid.push(LearnerSpec::Gbt {
        trees: 100,
        depth: 2,
        learning_rate: 0.1,
    });
    grid
}

/// A fitted, immutable nuisance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    /// Predicts the same value everywhere (constant training target).
    Constant { value: f64 },
    Poly(PolyModel),
    Gbt(GbtModel),
}

impl FittedModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            FittedModel::Constant { value } => *value,
            FittedModel::Poly(m) => m.predict_row(x),
            FittedModel::Gbt(m) => m.predict_row(x),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }
}
