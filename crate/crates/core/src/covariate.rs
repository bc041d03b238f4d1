//! Value of partial conditional covariate shifts.
//!
//! A shift restricted to `Z_s` moves `p(Z_s | W)` to the target while
//! keeping `p(Z_{-s} | W, Z_s)` at the source. With
//! `Δ_s(w) = μ_s0(w) - μ_10(w)` the unexplained variation is
//! `num(s) = E_1[Δ_s(W)^2]`, the total is `den = num(∅)`, and the value is
//! `1 - num(s)/den`. The numerator is estimated by a one-step correction
//! whose per-row terms are, on target rows,
//! `Δ^2 + 2Δ(μ_0ms0 - μ_s0) - 2Δ(μ_··0 - μ_10)`, and on source rows
//! `2Δ(ℓ - μ_0ms0) π_1s0 - 2Δ(ℓ - μ_··0) π_110`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregate::InfluenceEstimate;
use crate::dataset::{Dataset, SOURCE, TARGET};
use crate::error::{Error, Result};
use crate::estimate::{domain_mean_influence, one_minus_ratio, DomainShares, SubsetValue};
use crate::learners::{fit_density_ratio, DensityRatioModel, FittedModel};
use crate::nuisance::{fit_regression, keys, selected_name, BaseNuisances, BaseValues, NuisanceOptions};
use crate::subset::{derive_seed, Subset};

/// Relative tolerance below which the total covariate-shift variation is
/// treated as zero (times the mean squared loss).
pub const DEN_TOLERANCE: f64 = 1e-8;

/// Nuisances specific to one strict, non-empty subset `s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateSubsetNuisances {
    pub subset: Subset,
    /// `E_0[ℓ | W, Z_s]` on `[W | Z_s]`.
    pub mu_0ms0: FittedModel,
    /// `E_1[μ_0ms0(W, Z_s) | W]` on `W`.
    pub mu_s0: FittedModel,
    /// `p_1(W, Z_s) / p_0(W, Z_s)`.
    pub pi_1s0: DensityRatioModel,
    pub selections: BTreeMap<String, String>,
}

/// Fits the subset-specific nuisances. Anchor subsets (`∅` and the full
/// set) reuse shared nuisances and need no fit.
pub fn fit_covariate_subset(
    data: &Dataset,
    train: &[usize],
    base: &BaseNuisances,
    s: &Subset,
    opts: &NuisanceOptions,
    seed: u64,
) -> Result<CovariateSubsetNuisances> {
    if s.is_empty() || s.is_full(data.m2()) {
        return Err(Error::Internal(format!("subset {s} is an anchor and needs no fit")));
    }
    let rule = base.rule.as_ref();
    let key = s.stable_hash();
    let src = data.rows_in(train, SOURCE);
    let tgt = data.rows_in(train, TARGET);
    let xs_src = data.design_subset(&src, s);
    let xs_tgt = data.design_subset(&tgt, s);
    let mut selections = BTreeMap::new();

    let response = match base.mu_dot0.outcome_model() {
        Some(_) => base.mu_dot0.predict(rule, base.m1, &data.design_full(&src)),
        None => data.loss_at(&src),
    };
    let fit = fit_regression(&xs_src, &response, opts, derive_seed(derive_seed(seed, keys::MU_0MS0), key))?;
    selections.insert(format!("mu_0ms0{s}"), fit.describe());
    let mu_0ms0 = fit.model;

    let nested = mu_0ms0.predict(&xs_tgt);
    let fit = fit_regression(
        &data.design(&tgt, &[]),
        &nested,
        opts,
        derive_seed(derive_seed(seed, keys::MU_S0), key),
    )?;
    selections.insert(format!("mu_s0{s}"), fit.describe());
    let mu_s0 = fit.model;

    let pi_1s0 = fit_density_ratio(
        &xs_tgt,
        &xs_src,
        &opts.learners,
        derive_seed(derive_seed(seed, keys::PI_1S0), key),
    )?;
    selections.insert(format!("pi_1s0{s}"), selected_name(&pi_1s0));

    Ok(CovariateSubsetNuisances {
        subset: s.clone(),
        mu_0ms0,
        mu_s0,
        pi_1s0,
        selections,
    })
}

/// Subset-specific nuisance values on the evaluation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTerms {
    pub mu_0ms0: Vec<f64>,
    pub mu_s0: Vec<f64>,
    pub pi_1s0: Vec<f64>,
}

impl CovariateTerms {
    /// Values for `s = ∅`: `μ_0∅0 = μ_∅0 = μ_00`, `π_1∅0 = π_100`.
    pub fn empty_anchor(base: &BaseValues) -> Self {
        CovariateTerms {
            mu_0ms0: base.mu_00.clone(),
            mu_s0: base.mu_00.clone(),
            pi_1s0: base.pi_100.clone(),
        }
    }

    /// Values for the full set: `μ_0ms0 = μ_··0`, `μ_s0 = μ_10`,
    /// `π_1s0 = π_110`.
    pub fn full_anchor(base: &BaseValues, mu_10: &[f64]) -> Self {
        CovariateTerms {
            mu_0ms0: base.mu_dot0.clone(),
            mu_s0: mu_10.to_vec(),
            pi_1s0: base.pi_110.clone(),
        }
    }

    pub fn from_nuisances(n: &CovariateSubsetNuisances, data: &Dataset, rows: &[usize]) -> Self {
        let xs = data.design_subset(rows, &n.subset);
        CovariateTerms {
            mu_0ms0: n.mu_0ms0.predict(&xs),
            mu_s0: n.mu_s0.predict(&data.design(rows, &[])),
            pi_1s0: n.pi_1s0.ratio(&xs),
        }
    }
}

/// Per-row one-step terms of `num(s)`.
pub fn covariate_num_terms(base: &BaseValues, mu_10: &[f64], t: &CovariateTerms) -> Vec<f64> {
    (0..base.loss.len())
        .map(|i| {
            let d = t.mu_s0[i] - mu_10[i];
            if base.domain[i] == TARGET {
                d * d + 2.0 * d * (t.mu_0ms0[i] - t.mu_s0[i]) - 2.0 * d * (base.mu_dot0[i] - mu_10[i])
            } else {
                let l = base.loss[i];
                2.0 * d * (l - t.mu_0ms0[i]) * t.pi_1s0[i] - 2.0 * d * (l - base.mu_dot0[i]) * base.pi_110[i]
            }
        })
        .collect()
}

/// One-step estimate of `num(s)` with its influence values.
pub fn covariate_num(base: &BaseValues, mu_10: &[f64], t: &CovariateTerms) -> Result<InfluenceEstimate> {
    let shares = DomainShares::new(&base.domain)?;
    let g = covariate_num_terms(base, mu_10, t);
    let (point, psi) = domain_mean_influence(&g, &base.domain, shares);
    Ok(InfluenceEstimate { point, psi })
}

/// Total covariate-shift variation `den = num(∅)`; fails when it is
/// numerically zero.
pub fn covariate_den(base: &BaseValues, mu_10: &[f64]) -> Result<InfluenceEstimate> {
    let den = covariate_num(base, mu_10, &CovariateTerms::empty_anchor(base))?;
    let scale = base.loss.iter().map(|l| l * l).sum::<f64>() / base.loss.len() as f64;
    let floor = DEN_TOLERANCE * scale.max(f64::MIN_POSITIVE);
    if den.point.is_nan() || den.point <= floor {
        return Err(Error::Degenerate(format!(
            "no covariate-shift variation to explain (denominator {:.3e})",
            den.point
        )));
    }
    Ok(den)
}

/// `v_Z(s) = 1 - num(s)/den` with a delta-method interval.
pub fn value_conditional_covariate(
    s: &Subset,
    base: &BaseValues,
    mu_10: &[f64],
    terms: &CovariateTerms,
    den: &InfluenceEstimate,
    alpha: f64,
) -> Result<SubsetValue> {
    let num = covariate_num(base, mu_10, terms)?;
    if !num.point.is_finite() {
        return Err(Error::Data(format!("non-finite covariate numerator for subset {s}")));
    }
    Ok(one_minus_ratio(s.clone(), num.point, &num.psi, den.point, &den.psi, alpha))
}
