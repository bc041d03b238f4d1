use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit_cv, FittedModel, LearnerSpec, Task};
use crate::matrix::Matrix;

/// Default probability clamp applied before odds are formed.
pub const DEFAULT_CLIP: (f64, f64) = (0.01, 0.99);

/// Candidate grid, folds and clamp shared by density-ratio fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub candidates: Vec<LearnerSpec>,
    pub folds: usize,
    pub clip: (f64, f64),
}

/// Density ratio `p_num(x) / p_den(x)` from a classifier separating a
/// numerator sample (label 1) from a denominator sample (label 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRatioModel {
    pub classifier: FittedModel,
    /// `n_den / n_num`, undoing the class-size imbalance in the odds.
    pub prior_correction: f64,
    pub clip: (f64, f64),
    pub selected: Option<LearnerSpec>,
}

impl DensityRatioModel {
    pub fn new(classifier: FittedModel, n_num: usize, n_den: usize, clip: (f64, f64)) -> Self {
        DensityRatioModel {
            classifier,
            prior_correction: n_den as f64 / n_num as f64,
            clip,
            selected: None,
        }
    }

    /// Clamped classifier probability of the numerator class.
    fn prob(&self, x: &[f64]) -> f64 {
        self.classifier.predict_row(x).clamp(self.clip.0, self.clip.1)
    }

    pub fn ratio_row(&self, x: &[f64]) -> f64 {
        let p = self.prob(x);
        p / (1.0 - p) * self.prior_correction
    }

    pub fn ratio(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.ratio_row(x.row(i))).collect()
    }

    /// True when the classifier output had to be clamped at `x`.
    pub fn is_clamped(&self, x: &[f64]) -> bool {
        let p = self.classifier.predict_row(x);
        p < self.clip.0 || p > self.clip.1
    }

    /// Fraction of rows of `x` whose probability was clamped.
    pub fn clamped_fraction(&self, x: &Matrix) -> f64 {
        if x.rows() == 0 {
            return 0.0;
        }
        (0..x.rows()).filter(|&i| self.is_clamped(x.row(i))).count() as f64 / x.rows() as f64
    }
}

/// Fits `p_num / p_den` by cross-validated classification of the stacked
/// samples.
pub fn fit_density_ratio(
    numerator: &Matrix,
    denominator: &Matrix,
    config: &LearnerConfig,
    seed: u64,
) -> Result<DensityRatioModel> {
    if numerator.rows() == 0 || denominator.rows() == 0 {
        return Err(Error::Data("density ratio needs both samples non-empty".into()));
    }
    if numerator.cols() != denominator.cols() {
        return Err(Error::Data("density ratio samples differ in width".into()));
    }
    let (lo, hi) = config.clip;
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return Err(Error::Config(format!("probability clamp ({lo}, {hi}) must satisfy 0 < lo < hi < 1")));
    }
    let x = numerator.vstack(denominator);
    let mut y = vec![1.0; numerator.rows()];
    y.extend(std::iter::repeat_n(0.0, denominator.rows()));
    let fit = fit_cv(&config.candidates, &x, &y, Task::Classification, config.folds, seed)?;
    let mut model = DensityRatioModel::new(fit.model, numerator.rows(), denominator.rows(), config.clip);
    model.selected = fit.selected;
    Ok(model)
}
