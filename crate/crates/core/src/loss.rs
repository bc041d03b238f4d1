//! The fixed prediction model being explained, seen through its 0-1 loss.
//!
//! Estimators for outcome shifts need the loss at points that were never
//! observed: the observed row with the other outcome value, and hybrid rows
//! whose `Z_{-s}` block comes from a different observation. A
//! [`PredictionRule`] supplies the model's predicted label anywhere.

use serde::{Deserialize, Serialize};

use crate::learners::FittedModel;

/// Linear score rule: predicts 1 iff `intercept + w·w_coef + z·z_coef >= 0`.
///
/// A logistic model thresholded at probability 0.5 is exactly this rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRule {
    pub intercept: f64,
    pub w_coef: Vec<f64>,
    pub z_coef: Vec<f64>,
}

impl LinearRule {
    pub fn score(&self, w: &[f64], z: &[f64]) -> f64 {
        self.intercept
            + w.iter().zip(&self.w_coef).map(|(a, b)| a * b).sum::<f64>()
            + z.iter().zip(&self.z_coef).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionRule {
    /// Known linear classifier, evaluated exactly.
    Linear(LinearRule),
    /// Classifier fitted to the model's observed predicted labels; returns
    /// the probability of predicting 1.
    Surrogate { model: FittedModel },
}

impl PredictionRule {
    /// Probability that the model predicts label 1 at `(w, z)`.
    pub fn predict(&self, w: &[f64], z: &[f64]) -> f64 {
        match self {
            PredictionRule::Linear(rule) => {
                if rule.score(w, z) >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            PredictionRule::Surrogate { model } => {
                let mut x = Vec::with_capacity(w.len() + z.len());
                x.extend_from_slice(w);
                x.extend_from_slice(z);
                model.predict_row(&x).clamp(0.0, 1.0)
            }
        }
    }

    /// Expected 0-1 loss at `(w, z)` for outcome `y`.
    pub fn loss(&self, w: &[f64], z: &[f64], y: f64) -> f64 {
        zero_one(self.predict(w, z), y)
    }
}

/// `1{label != y}` generalized to a soft label `p = P(label = 1)`.
#[inline]
pub fn zero_one(p_label_one: f64, y: f64) -> f64 {
    y * (1.0 - p_label_one) + (1.0 - y) * p_label_one
}

/// Recovers the predicted label from an observed 0-1 loss: the label equals
/// `y` when the loss is 0 and `1 - y` otherwise.
#[inline]
pub fn label_from_loss(y: f64, loss: f64) -> f64 {
    if loss == 0.0 {
        y
    } else {
        1.0 - y
    }
}
