use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::FittedModel;

pub const DEFAULT_BINS: usize = 20;

/// Rounds one risk value to the nearest multiple of `1/bins`.
#[inline]
pub fn bin_risk_one(q: f64, bins: usize) -> f64 {
    let b = bins as f64;
    ((q * b + 0.5).floor() / b).min(1.0)
}

/// `floor(q * B + 1/2) / B` elementwise, capped at 1.
pub fn bin_risk(q: &[f64], bins: usize) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::Config(format!("bin count must be at least 2, got {bins}")));
    }
    if let Some(v) = q.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Data(format!("risk value {v} lies outside [0,1]")));
    }
    Ok(q.iter().map(|&v| bin_risk_one(v, bins)).collect())
}

/// Source-domain risk `q(w,z) = P_0(Y=1 | W=w, Z=z)` and its binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub classifier: FittedModel,
    pub bins: usize,
}

impl RiskModel {
    /// Risk at `x = [w | z]`.
    pub fn q(&self, x: &[f64]) -> f64 {
        self.classifier.predict_row(x).clamp(0.0, 1.0)
    }

    pub fn q_bin(&self, x: &[f64]) -> f64 {
        bin_risk_one(self.q(x), self.bins)
    }

    /// Fraction of `q` values within `tol` of an interior bin edge
    /// `(k + 1/2)/B`; `q` in {0, 1} never counts.
    pub fn edge_fraction(q: &[f64], bins: usize, tol: f64) -> f64 {
        if q.is_empty() {
            return 0.0;
        }
        let b = bins as f64;
        let near = q
            .iter()
            .filter(|&&v| {
                if v <= 0.0 || v >= 1.0 {
                    return false;
                }
                let k = (v * b - 0.5).round();
                ((k + 0.5) / b - v).abs() <= tol
            })
            .count();
        near as f64 / q.len() as f64
    }
}
