//! Fitting the nuisance models shared by the aggregate and detailed
//! decompositions.
//!
//! When the prediction rule of the explained model is known, conditional
//! mean losses are built from outcome-probability models,
//! `E[ℓ | x] = ℓ(x,1) p(Y=1|x) + ℓ(x,0) p(Y=0|x)`, rather than by regressing
//! observed losses directly. The loss is a kinked function of `x` around
//! the model's decision boundary, while `p(Y=1|x)` is usually smooth and
//! extrapolates into regions one domain rarely visits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SOURCE, TARGET};
use crate::error::Result;
use crate::learners::{fit_cv, fit_density_ratio, DensityRatioModel, FittedModel, LearnerConfig, Task};
use crate::loss::PredictionRule;
use crate::matrix::Matrix;
use crate::subset::derive_seed;

/// Stream keys for seeded nuisance fits.
pub(crate) mod keys {
    pub const MU_DOT0: u64 = 11;
    pub const MU_00: u64 = 12;
    pub const PI_100: u64 = 13;
    pub const PI_110: u64 = 14;
    pub const MU_10: u64 = 15;
    pub const RISK_1: u64 = 16;
    pub const MU_0MS0: u64 = 21;
    pub const MU_S0: u64 = 22;
    pub const PI_1S0: u64 = 23;
    pub const P_S: u64 = 31;
    pub const PHANTOM: u64 = 32;
    pub const PHANTOM_PERM: u64 = 33;
    pub const INNER: u64 = 34;
}

/// Conditional mean loss `E_d[ℓ | W, Z]` in one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossMean {
    /// Regression of observed losses on `[W | Z]`.
    Direct { model: FittedModel },
    /// `sum_y ℓ(x, y) p(y | x)` from a classifier of `Y` on `[W | Z]`.
    ViaOutcome { outcome: FittedModel },
}

impl LossMean {
    pub fn predict_row(&self, rule: Option<&PredictionRule>, m1: usize, x: &[f64]) -> f64 {
        match self {
            LossMean::Direct { model } => model.predict_row(x),
            LossMean::ViaOutcome { outcome } => {
                let rule = rule.expect("outcome-based loss mean requires a prediction rule");
                expected_loss(rule, &x[..m1], &x[m1..], outcome.predict_row(x).clamp(0.0, 1.0))
            }
        }
    }

    pub fn predict(&self, rule: Option<&PredictionRule>, m1: usize, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(rule, m1, x.row(i))).collect()
    }

    pub fn outcome_model(&self) -> Option<&FittedModel> {
        match self {
            LossMean::ViaOutcome { outcome } => Some(outcome),
            LossMean::Direct { .. } => None,
        }
    }
}

/// `ℓ(x,1) p1 + ℓ(x,0) (1 - p1)` for the prediction rule's loss.
#[inline]
pub fn expected_loss(rule: &PredictionRule, w: &[f64], z: &[f64], p1: f64) -> f64 {
    let label = rule.predict(w, z);
    // 0-1 loss: ℓ(x,1) = 1 - label, ℓ(x,0) = label.
    (1.0 - label) * p1 + label * (1.0 - p1)
}

/// Options for nuisance fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceOptions {
    pub learners: LearnerConfig,
    /// Number of risk bins for the outcome decomposition.
    pub bins: usize,
}

/// Nuisances shared by every decomposition target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseNuisances {
    pub m1: usize,
    pub m2: usize,
    pub rule: Option<PredictionRule>,
    /// `E_0[ℓ | W, Z]`; its outcome model (if any) is the source risk.
    pub mu_dot0: LossMean,
    /// `E_0[ℓ | W]`.
    pub mu_00: FittedModel,
    pub pi_100: DensityRatioModel,
    pub pi_110: DensityRatioModel,
    /// `E_1[μ_··0(W, Z) | W]`, needed by the covariate decomposition.
    pub mu_10: Option<FittedModel>,
    /// Target outcome model `p_1(Y=1 | W, Z)`, needed by the outcome
    /// decomposition.
    pub risk_1: Option<FittedModel>,
    /// Selected learner per nuisance, for reporting.
    pub selections: BTreeMap<String, String>,
}

/// Which optional shared nuisances to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BaseNeeds {
    pub covariate: bool,
    pub outcome: bool,
}

fn describe(fit: &crate::learners::CvFit) -> String {
    if fit.constant_target {
        "constant (constant training target)".to_string()
    } else {
        fit.describe()
    }
}

/// Regression of `targets` on `x` with cross-validated selection.
pub(crate) fn fit_regression(
    x: &Matrix,
    targets: &[f64],
    opts: &NuisanceOptions,
    seed: u64,
) -> Result<crate::learners::CvFit> {
    fit_cv(&opts.learners.candidates, x, targets, Task::Regression, opts.learners.folds, seed)
}

pub(crate) fn fit_classifier(
    x: &Matrix,
    targets: &[f64],
    opts: &NuisanceOptions,
    seed: u64,
) -> Result<crate::learners::CvFit> {
    fit_cv(&opts.learners.candidates, x, targets, Task::Classification, opts.learners.folds, seed)
}

/// Fits the shared nuisances on the training rows `train`.
pub fn fit_base(
    data: &Dataset,
    train: &[usize],
    rule: Option<&PredictionRule>,
    needs: BaseNeeds,
    opts: &NuisanceOptions,
    seed: u64,
) -> Result<BaseNuisances> {
    let m1 = data.m1();
    let src = data.rows_in(train, SOURCE);
    let tgt = data.rows_in(train, TARGET);
    let x_src = data.design_full(&src);
    let x_tgt = data.design_full(&tgt);
    let w_src = data.design(&src, &[]);
    let w_tgt = data.design(&tgt, &[]);
    let mut selections = BTreeMap::new();

    let mu_dot0 = match rule {
        Some(_) => {
            let fit = fit_classifier(&x_src, &data.y_at(&src), opts, derive_seed(seed, keys::MU_DOT0))?;
            selections.insert("source_outcome".to_string(), describe(&fit));
            LossMean::ViaOutcome { outcome: fit.model }
        }
        None => {
            let fit = fit_regression(&x_src, &data.loss_at(&src), opts, derive_seed(seed, keys::MU_DOT0))?;
            selections.insert("mu_dot0".to_string(), describe(&fit));
            LossMean::Direct { model: fit.model }
        }
    };

    // Source-side loss regressions use the fitted μ_··0 as the response when
    // it is outcome-derived (smoother, and consistent with μ_··0).
    let src_response = match &mu_dot0 {
        LossMean::ViaOutcome { .. } => mu_dot0.predict(rule, m1, &x_src),
        LossMean::Direct { .. } => data.loss_at(&src),
    };
    let fit = fit_regression(&w_src, &src_response, opts, derive_seed(seed, keys::MU_00))?;
    selections.insert("mu_00".to_string(), describe(&fit));
    let mu_00 = fit.model;

    let pi_100 = fit_density_ratio(&w_tgt, &w_src, &opts.learners, derive_seed(seed, keys::PI_100))?;
    selections.insert("pi_100".to_string(), selected_name(&pi_100));
    let pi_110 = fit_density_ratio(&x_tgt, &x_src, &opts.learners, derive_seed(seed, keys::PI_110))?;
    selections.insert("pi_110".to_string(), selected_name(&pi_110));

    let mu_10 = if needs.covariate {
        let response = mu_dot0.predict(rule, m1, &x_tgt);
        let fit = fit_regression(&w_tgt, &response, opts, derive_seed(seed, keys::MU_10))?;
        selections.insert("mu_10".to_string(), describe(&fit));
        Some(fit.model)
    } else {
        None
    };

    let risk_1 = if needs.outcome && rule.is_some() {
        let fit = fit_classifier(&x_tgt, &data.y_at(&tgt), opts, derive_seed(seed, keys::RISK_1))?;
        selections.insert("target_outcome".to_string(), describe(&fit));
        Some(fit.model)
    } else {
        None
    };

    Ok(BaseNuisances {
        m1,
        m2: data.m2(),
        rule: rule.cloned(),
        mu_dot0,
        mu_00,
        pi_100,
        pi_110,
        mu_10,
        risk_1,
        selections,
    })
}

pub(crate) fn selected_name(model: &DensityRatioModel) -> String {
    model
        .selected
        .as_ref()
        .map(|s| s.to_string())
        .unwrap_or_else(|| "constant".to_string())
}

/// Evaluation-row values of the shared nuisances.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseValues {
    pub rows: Vec<usize>,
    pub loss: Vec<f64>,
    pub domain: Vec<u8>,
    pub mu_00: Vec<f64>,
    pub mu_dot0: Vec<f64>,
    pub pi_100: Vec<f64>,
    pub pi_110: Vec<f64>,
    /// Fraction of evaluation rows whose density-ratio probability was
    /// clamped, for `pi_100` and `pi_110`.
    pub clamped: (f64, f64),
}

impl BaseNuisances {
    /// Evaluates the shared nuisances on `rows`.
    pub fn values(&self, data: &Dataset, rows: &[usize]) -> BaseValues {
        let x = data.design_full(rows);
        let w = data.design(rows, &[]);
        BaseValues {
            rows: rows.to_vec(),
            loss: data.loss_at(rows),
            domain: rows.iter().map(|&i| data.domain()[i]).collect(),
            mu_00: self.mu_00.predict(&w),
            mu_dot0: self.mu_dot0.predict(self.rule.as_ref(), self.m1, &x),
            pi_100: self.pi_100.ratio(&w),
            pi_110: self.pi_110.ratio(&x),
            clamped: (self.pi_100.clamped_fraction(&w), self.pi_110.clamped_fraction(&x)),
        }
    }

    pub fn aggregate_inputs(values: &BaseValues) -> crate::aggregate::AggregateInputs {
        crate::aggregate::AggregateInputs {
            loss: values.loss.clone(),
            domain: values.domain.clone(),
            mu_00: values.mu_00.clone(),
            mu_dot0: values.mu_dot0.clone(),
            pi_100: values.pi_100.clone(),
            pi_110: values.pi_110.clone(),
        }
    }
}
