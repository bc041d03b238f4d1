//! Aggregate decomposition of the performance gap into baseline (`W`),
//! conditional covariate (`Z | W`) and conditional outcome (`Y | W, Z`)
//! shifts.
//!
//! With `P_0`, `P_1` the source and target evaluation means:
//!
//! * `Λ_W = P_0[(ℓ - μ_00) π_100] + P_1 μ_00 - P_0 ℓ`
//! * `Λ_Z = P_0[(ℓ - μ_··0) π_110] + P_1 μ_··0 - P_0[(ℓ - μ_00) π_100] - P_1 μ_00`
//! * `Λ_Y = P_1 ℓ - P_0[(ℓ - μ_··0) π_110] - P_1 μ_··0`
//!
//! The three terms telescope to `P_1 ℓ - P_0 ℓ` whatever the nuisances.

use serde::{Deserialize, Serialize};

use crate::dataset::TARGET;
use crate::error::{Error, Result};
use crate::estimate::{check_alpha, domain_mean_influence, DomainShares, EstimateWithCI};

/// Nuisance values evaluated on the evaluation rows, aligned with `loss`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateInputs {
    pub loss: Vec<f64>,
    pub domain: Vec<u8>,
    /// `μ_00(w) = E_0[ℓ | W = w]`.
    pub mu_00: Vec<f64>,
    /// `μ_··0(w, z) = E_0[ℓ | W = w, Z = z]`.
    pub mu_dot0: Vec<f64>,
    /// `p_1(w) / p_0(w)`.
    pub pi_100: Vec<f64>,
    /// `p_1(w, z) / p_0(w, z)`.
    pub pi_110: Vec<f64>,
}

impl AggregateInputs {
    fn validate(&self) -> Result<DomainShares> {
        let n = self.loss.len();
        for (name, v) in [
            ("mu_00", &self.mu_00),
            ("mu_dot0", &self.mu_dot0),
            ("pi_100", &self.pi_100),
            ("pi_110", &self.pi_110),
        ] {
            if v.len() != n {
                return Err(Error::Internal(format!("{name} has {} values for {n} rows", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("nuisance {name} produced a non-finite value")));
            }
        }
        if self.domain.len() != n {
            return Err(Error::Internal("domain flags misaligned with loss".into()));
        }
        DomainShares::new(&self.domain)
    }
}

/// A point estimate with its per-row influence values (kept so that
/// cross-fitted folds can pool them).
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceEstimate {
    pub point: f64,
    pub psi: Vec<f64>,
}

impl InfluenceEstimate {
    pub fn with_ci(&self, alpha: f64) -> EstimateWithCI {
        EstimateWithCI::from_influence(self.point, &self.psi, alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateInfluence {
    pub lambda_w: InfluenceEstimate,
    pub lambda_z: InfluenceEstimate,
    pub lambda_y: InfluenceEstimate,
    pub total: InfluenceEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEstimate {
    pub lambda_w: EstimateWithCI,
    pub lambda_z: EstimateWithCI,
    pub lambda_y: EstimateWithCI,
    pub total: EstimateWithCI,
}

impl AggregateInfluence {
    pub fn with_ci(&self, alpha: f64) -> AggregateEstimate {
        AggregateEstimate {
            lambda_w: self.lambda_w.with_ci(alpha),
            lambda_z: self.lambda_z.with_ci(alpha),
            lambda_y: self.lambda_y.with_ci(alpha),
            total: self.total.with_ci(alpha),
        }
    }
}

impl AggregateEstimate {
    /// `(name, estimate)` pairs in reporting order.
    pub fn terms(&self) -> [(&'static str, &EstimateWithCI); 4] {
        [
            ("lambda_w", &self.lambda_w),
            ("lambda_z", &self.lambda_z),
            ("lambda_y", &self.lambda_y),
            ("total", &self.total),
        ]
    }
}

fn estimate_from_terms(g: &[f64], domain: &[u8], shares: DomainShares) -> InfluenceEstimate {
    let (point, psi) = domain_mean_influence(g, domain, shares);
    InfluenceEstimate { point, psi }
}

/// Debiased (augmented inverse-probability weighted) estimates.
pub fn aggregate_debiased(inputs: &AggregateInputs) -> Result<AggregateInfluence> {
    let shares = inputs.validate()?;
    let n = inputs.loss.len();
    let (mut gw, mut gz, mut gy, mut gt) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let l = inputs.loss[i];
        if inputs.domain[i] == TARGET {
            gw[i] = inputs.mu_00[i];
            gz[i] = inputs.mu_dot0[i] - inputs.mu_00[i];
            gy[i] = l - inputs.mu_dot0[i];
            gt[i] = l;
        } else {
            let a_w = (l - inputs.mu_00[i]) * inputs.pi_100[i];
            let a_z = (l - inputs.mu_dot0[i]) * inputs.pi_110[i];
            gw[i] = a_w - l;
            gz[i] = a_z - a_w;
            gy[i] = -a_z;
            gt[i] = -l;
        }
    }
    let d = &inputs.domain;
    Ok(AggregateInfluence {
        lambda_w: estimate_from_terms(&gw, d, shares),
        lambda_z: estimate_from_terms(&gz, d, shares),
        lambda_y: estimate_from_terms(&gy, d, shares),
        total: estimate_from_terms(&gt, d, shares),
    })
}

/// Plug-in estimates `Λ_W = P_1 μ_00 - P_0 ℓ`, `Λ_Z = P_1(μ_··0 - μ_00)`,
/// `Λ_Y = P_1(ℓ - μ_··0)`. Their intervals treat the fitted nuisances as
/// fixed and are not valid; they exist as a comparison arm.
pub fn aggregate_plugin(inputs: &AggregateInputs) -> Result<AggregateInfluence> {
    let shares = inputs.validate()?;
    let n = inputs.loss.len();
    let (mut gw, mut gz, mut gy, mut gt) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let l = inputs.loss[i];
        if inputs.domain[i] == TARGET {
            gw[i] = inputs.mu_00[i];
            gz[i] = inputs.mu_dot0[i] - inputs.mu_00[i];
            gy[i] = l - inputs.mu_dot0[i];
            gt[i] = l;
        } else {
            gw[i] = -l;
            gt[i] = -l;
        }
    }
    let d = &inputs.domain;
    Ok(AggregateInfluence {
        lambda_w: estimate_from_terms(&gw, d, shares),
        lambda_z: estimate_from_terms(&gz, d, shares),
        lambda_y: estimate_from_terms(&gy, d, shares),
        total: estimate_from_terms(&gt, d, shares),
    })
}

/// Per-row terms of the one-step estimate of `E_1[(μ_··1 - μ_··0)^2]`, the
/// total variation in strata-level performance attributable to outcome
/// shift. Target rows: `Δ^2 + 2Δ(ℓ - μ_··1)`; source rows:
/// `-2Δ(ℓ - μ_··0) π_110`, with `Δ = μ_··1 - μ_··0`.
pub fn outcome_variation_terms(
    loss: &[f64],
    domain: &[u8],
    mu_0: &[f64],
    mu_1: &[f64],
    pi_110: &[f64],
) -> Vec<f64> {
    (0..loss.len())
        .map(|i| {
            let delta = mu_1[i] - mu_0[i];
            if domain[i] == TARGET {
                delta * delta + 2.0 * delta * (loss[i] - mu_1[i])
            } else {
                -2.0 * delta * (loss[i] - mu_0[i]) * pi_110[i]
            }
        })
        .collect()
}

/// One-step estimate of `E_1[(μ_··1 - μ_··0)^2]` with its influence.
pub fn outcome_variation(
    loss: &[f64],
    domain: &[u8],
    mu_0: &[f64],
    mu_1: &[f64],
    pi_110: &[f64],
) -> Result<InfluenceEstimate> {
    let shares = DomainShares::new(domain)?;
    let g = outcome_variation_terms(loss, domain, mu_0, mu_1, pi_110);
    Ok(estimate_from_terms(&g, domain, shares))
}

/// Validates `alpha` and attaches intervals.
pub fn finalize(influence: &AggregateInfluence, alpha: f64) -> Result<AggregateEstimate> {
    check_alpha(alpha)?;
    Ok(influence.with_ci(alpha))
}
