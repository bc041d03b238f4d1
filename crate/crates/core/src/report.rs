//! Serializable decomposition report.
//!
//! Readers ignore unknown fields, so reports written by newer versions with
//! extra fields still load; `schema_version` changes on breaking edits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregate::AggregateEstimate;
use crate::error::{Error, Result};
use crate::estimate::{EstimateWithCI, SubsetValue};
use crate::pipeline::EstimationOptions;
use crate::shapley::ShapleyAttribution;

pub const SCHEMA_VERSION: u32 = 1;

/// A condition worth a reader's attention that did not stop estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub stage: String,
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub value: Option<f64>,
}

/// A stage that failed; its report section is `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
    pub hint: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub n0: usize,
    pub n1: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub m1: usize,
    pub m2: usize,
    pub w_names: Vec<String>,
    pub z_names: Vec<String>,
    pub seed: u64,
    /// How losses at unobserved points are obtained: `linear`, `surrogate`
    /// or `none`.
    pub prediction_rule: String,
    pub options: EstimationOptions,
    /// Learner selected for each nuisance model.
    pub selected_learners: BTreeMap<String, String>,
    /// Numeric diagnostics (clamped-ratio fractions, bin-edge fractions).
    pub diagnostics: BTreeMap<String, f64>,
}

/// One named estimate, flattened to `{name, point, se, ci_lo, ci_hi, alpha, n_eval}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub name: String,
    #[serde(flatten)]
    pub estimate: EstimateWithCI,
}

fn named(est: &AggregateEstimate) -> Vec<NamedEstimate> {
    est.terms()
        .iter()
        .map(|(name, e)| NamedEstimate {
            name: name.to_string(),
            estimate: (*e).clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSection {
    pub source_mean_loss: f64,
    pub target_mean_loss: f64,
    /// `lambda_w`, `lambda_z`, `lambda_y`, `total`.
    pub debiased: Vec<NamedEstimate>,
    /// Plug-in comparison arm (intervals treat nuisances as fixed).
    #[serde(default)]
    pub plugin: Option<Vec<NamedEstimate>>,
}

impl AggregateSection {
    pub fn new(source_mean_loss: f64, target_mean_loss: f64, debiased: &AggregateEstimate, plugin: Option<&AggregateEstimate>) -> Self {
        AggregateSection {
            source_mean_loss,
            target_mean_loss,
            debiased: named(debiased),
            plugin: plugin.map(named),
        }
    }

    pub fn term(&self, name: &str) -> Option<&EstimateWithCI> {
        self.debiased.iter().find(|t| t.name == name).map(|t| &t.estimate)
    }

    pub fn plugin_term(&self, name: &str) -> Option<&EstimateWithCI> {
        self.plugin.as_ref()?.iter().find(|t| t.name == name).map(|t| &t.estimate)
    }
}

/// Shapley attribution of one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub name: String,
    pub index: usize,
    pub phi: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailedSection {
    /// `covariate` or `outcome`.
    pub target: String,
    /// Value of the empty subset, `v(∅)`.
    pub phi_0: EstimateWithCI,
    pub attributions: Vec<Attribution>,
    pub n_unique_subsets: usize,
    pub n_draws: usize,
    pub exhaustive: bool,
    pub efficiency_residual: f64,
    /// Every evaluated subset, in subset order.
    pub subset_values: Vec<SubsetValue>,
}

impl DetailedSection {
    pub fn new(target: &str, attribution: &ShapleyAttribution, z_names: &[String], mut values: Vec<SubsetValue>) -> Self {
        for v in &mut values {
            v.influence.clear();
        }
        values.sort_by(|a, b| a.subset.cmp(&b.subset));
        DetailedSection {
            target: target.to_string(),
            phi_0: attribution.phi[0].clone(),
            attributions: attribution.phi[1..]
                .iter()
                .enumerate()
                .map(|(j, e)| Attribution {
                    name: z_names[j].clone(),
                    index: j,
                    phi: e.point,
                    se: e.se,
                    ci_lo: e.ci_lo,
                    ci_hi: e.ci_hi,
                })
                .collect(),
            n_unique_subsets: attribution.n_unique_subsets,
            n_draws: attribution.n_draws,
            exhaustive: attribution.exhaustive,
            efficiency_residual: attribution.efficiency_residual,
            subset_values: values,
        }
    }

    /// The estimated value of subset `s`, if it was evaluated.
    pub fn value_of(&self, s: &crate::subset::Subset) -> Option<&SubsetValue> {
        self.subset_values.iter().find(|v| &v.subset == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub schema_version: u32,
    pub metadata: Metadata,
    #[serde(default)]
    pub aggregate: Option<AggregateSection>,
    #[serde(default)]
    pub detailed_covariate: Option<DetailedSection>,
    #[serde(default)]
    pub detailed_outcome: Option<DetailedSection>,
    #[serde(default)]
    pub warnings: Vec<Warning>,
    #[serde(default)]
    pub failures: Vec<StageFailure>,
}

impl DecompositionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: DecompositionReport = serde_json::from_str(text)?;
        if report.schema_version > SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "report schema version {} is newer than supported version {SCHEMA_VERSION}",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// Exit status for a completed run: 0, or the code of the first failed
    /// stage.
    pub fn exit_code(&self) -> i32 {
        self.failures.first().map(|f| f.exit_code).unwrap_or(0)
    }
}
