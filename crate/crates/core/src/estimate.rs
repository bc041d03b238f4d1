//! Point estimates with influence-function confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{SOURCE, TARGET};
use crate::error::{Error, Result};

/// Default significance level: every interval is a 90% CI.
pub const DEFAULT_ALPHA: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub point: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub alpha: f64,
    pub n_eval: usize,
}

/// Two-sided critical value `z_{1 - alpha/2}`.
pub fn z_crit(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

impl EstimateWithCI {
    pub fn from_se(point: f64, se: f64, alpha: f64, n_eval: usize) -> Self {
        let half = z_crit(alpha) * se;
        EstimateWithCI {
            point,
            se,
            ci_lo: point - half,
            ci_hi: point + half,
            alpha,
            n_eval,
        }
    }

    /// CI from per-observation influence values: `se = sd(psi) / sqrt(n)`.
    pub fn from_influence(point: f64, psi: &[f64], alpha: f64) -> Self {
        EstimateWithCI::from_se(point, influence_se(psi), alpha, psi.len())
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lo <= truth && truth <= self.ci_hi
    }
}

/// Sample standard deviation of `psi` divided by `sqrt(n)`.
pub fn influence_se(psi: &[f64]) -> f64 {
    let n = psi.len();
    if n < 2 {
        return 0.0;
    }
    let mean = psi.iter().sum::<f64>() / n as f64;
    let var = psi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Evaluation-sample domain proportions used to weight pooled influence
/// functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainShares {
    pub n0: usize,
    pub n1: usize,
}

impl DomainShares {
    pub fn new(domain: &[u8]) -> Result<Self> {
        let n1 = domain.iter().filter(|&&d| d == TARGET).count();
        let n0 = domain.len() - n1;
        if n0 == 0 || n1 == 0 {
            return Err(Error::Data(
                "evaluation partition must contain both source and target rows".into(),
            ));
        }
        Ok(DomainShares { n0, n1 })
    }

    pub fn n(&self) -> usize {
        self.n0 + self.n1
    }

    /// Empirical share `n_d / n`.
    pub fn share(&self, d: u8) -> f64 {
        let nd = if d == SOURCE { self.n0 } else { self.n1 };
        nd as f64 / self.n() as f64
    }
}

/// Estimate `sum_d P_d[g]` (per-domain means of per-row terms `g`) and its
/// pooled influence `psi_i = g_i / p_{d_i} - estimate`, whose mean is 0.
pub fn domain_mean_influence(g: &[f64], domain: &[u8], shares: DomainShares) -> (f64, Vec<f64>) {
    let p0 = shares.share(SOURCE);
    let p1 = shares.share(TARGET);
    let scaled: Vec<f64> = g
        .iter()
        .zip(domain)
        .map(|(&v, &d)| if d == TARGET { v / p1 } else { v / p0 })
        .collect();
    let est = scaled.iter().sum::<f64>() / g.len() as f64;
    let psi = scaled.into_iter().map(|v| v - est).collect();
    (est, psi)
}

/// Estimated value of one variable subset together with the per-row
/// influence values needed to propagate its uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetValue {
    pub subset: crate::subset::Subset,
    pub value: EstimateWithCI,
    /// Numerator of the value ratio (squared deviation left unexplained).
    pub num: f64,
    pub num_se: f64,
    /// Denominator (total variation to explain).
    pub den: f64,
    pub den_se: f64,
    /// Per-evaluation-row influence values of `value`; not serialized.
    #[serde(skip)]
    pub influence: Vec<f64>,
}

/// Combines ratio pieces into `value = 1 - num/den` with delta-method
/// influence `-(psi_num/den - num psi_den/den^2)`.
pub fn one_minus_ratio(
    subset: crate::subset::Subset,
    num: f64,
    psi_num: &[f64],
    den: f64,
    psi_den: &[f64],
    alpha: f64,
) -> SubsetValue {
    let influence: Vec<f64> = psi_num
        .iter()
        .zip(psi_den)
        .map(|(pn, pd)| -(pn / den - num * pd / (den * den)))
        .collect();
    let value = EstimateWithCI::from_influence(1.0 - num / den, &influence, alpha);
    SubsetValue {
        subset,
        value,
        num,
        num_se: influence_se(psi_num),
        den,
        den_se: influence_se(psi_den),
        influence,
    }
}
