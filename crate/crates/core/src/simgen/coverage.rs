//! Coverage experiments: repeated draws from a generator, estimation, and
//! the fraction of intervals containing the ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracle::{aggregate_truth, covariate_value_truth, outcome_value_truth, AggregateTruth, ValueTruth};
use super::{DgpKind, DgpSpec};
use crate::error::{Error, Result};
use crate::estimate::EstimateWithCI;
use crate::pipeline::{decompose, EstimationOptions, Target};
use crate::report::DecompositionReport;
use crate::subset::{derive_seed, Subset};

/// Fewer replications than this make a coverage rate meaningless.
pub const MIN_REPS: usize = 10;

/// Monte Carlo sizes for the ground-truth oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    /// Feature draws for the aggregate terms.
    pub aggregate_draws: usize,
    /// Outer draws for subset values.
    pub outer: usize,
    /// Inner draws (covariate) or accepted hybrid draws (outcome) per outer
    /// draw.
    pub inner: usize,
    pub seed: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            aggregate_draws: 10_000_000,
            outer: 40_000,
            inner: 400,
            seed: 0x5eed,
        }
    }
}

/// Ground truth for every target of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truths {
    pub aggregate: Option<AggregateTruth>,
    pub covariate: Vec<ValueTruth>,
    pub outcome: Vec<ValueTruth>,
}

/// Computes the truths needed for `targets` on `subsets`.
pub fn compute_truths(spec: &DgpSpec, targets: &[Target], subsets: &[Subset], bins: usize, oracle: &OracleSettings) -> Truths {
    let rule = spec.source_bayes_rule();
    Truths {
        aggregate: targets
            .contains(&Target::Aggregate)
            .then(|| aggregate_truth(spec, &rule, oracle.aggregate_draws, derive_seed(oracle.seed, 1))),
        covariate: if targets.contains(&Target::DetailedCovariate) {
            covariate_value_truth(spec, &rule, subsets, oracle.outer, oracle.inner, derive_seed(oracle.seed, 2))
        } else {
            Vec::new()
        },
        outcome: if targets.contains(&Target::DetailedOutcome) {
            outcome_value_truth(spec, &rule, subsets, bins, oracle.outer, oracle.inner, derive_seed(oracle.seed, 3))
        } else {
            Vec::new()
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    /// Generator; `n_source`, `n_target` and `seed` are taken from it, and
    /// each replication reseeds it.
    pub spec: DgpSpec,
    pub reps: usize,
    /// Subsets whose values are checked (detailed targets).
    pub subsets: Vec<Subset>,
    pub options: EstimationOptions,
    pub oracle: OracleSettings,
    /// Precomputed truths; computed with `oracle` when absent.
    #[serde(default)]
    pub truths: Option<Truths>,
}

/// Coverage of one estimand by one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    /// `lambda_w`, ..., `v_z{1}`, `v_y{2}`.
    pub target: String,
    /// `debiased` or `plugin`.
    pub estimator: String,
    pub n: usize,
    pub truth: f64,
    /// Fraction of successful replications whose interval contains the
    /// truth.
    pub coverage: f64,
    pub mean_width: f64,
    pub mean_estimate: f64,
    /// Coverage of the mean estimate over replications (checks interval
    /// width independently of bias).
    pub coverage_of_mean: f64,
    pub reps: usize,
    pub failed_reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub kind: DgpKind,
    pub n: usize,
    pub reps: usize,
    pub alpha: f64,
    pub truths: Truths,
    pub rows: Vec<CoverageRow>,
}

impl CoverageTable {
    pub fn row(&self, target: &str, estimator: &str) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.target == target && r.estimator == estimator)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }
}

/// Interval and point for each named estimand in one report.
fn extract(report: &DecompositionReport, truths: &Truths) -> Vec<(String, String, EstimateWithCI)> {
    let mut out = Vec::new();
    if let Some(agg) = &report.aggregate {
        for t in &agg.debiased {
            out.push((t.name.clone(), "debiased".to_string(), t.estimate.clone()));
        }
        for t in agg.plugin.iter().flatten() {
            out.push((t.name.clone(), "plugin".to_string(), t.estimate.clone()));
        }
    }
    for (prefix, section, list) in [
        ("v_z", &report.detailed_covariate, &truths.covariate),
        ("v_y", &report.detailed_outcome, &truths.outcome),
    ] {
        if let Some(section) = section {
            for t in list {
                if let Some(v) = section.value_of(&t.subset) {
                    out.push((format!("{prefix}{}", t.subset), "debiased".to_string(), v.value.clone()));
                }
            }
        }
    }
    out
}

fn truth_of(name: &str, truths: &Truths) -> Option<f64> {
    if let Some(agg) = &truths.aggregate {
        if let Some((_, v)) = agg.terms().iter().find(|(n, _)| *n == name) {
            return Some(*v);
        }
    }
    for (prefix, list) in [("v_z", &truths.covariate), ("v_y", &truths.outcome)] {
        if let Some(t) = list.iter().find(|t| format!("{prefix}{}", t.subset) == name) {
            return Some(t.value);
        }
    }
    None
}

/// Runs `reps` replications and tabulates interval coverage.
pub fn coverage_experiment(cfg: &CoverageConfig) -> Result<CoverageTable> {
    if cfg.reps < MIN_REPS {
        return Err(Error::Config(format!(
            "coverage needs at least {MIN_REPS} replications, got {}",
            cfg.reps
        )));
    }
    cfg.options.validate()?;
    let template = &cfg.spec;
    template.validate()?;
    let truths = match &cfg.truths {
        Some(t) => t.clone(),
        None => compute_truths(template, &cfg.options.targets, &cfg.subsets, cfg.options.bins, &cfg.oracle),
    };
    let rule = template.source_bayes_rule();
    let results: Vec<Option<Vec<(String, String, EstimateWithCI)>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let mut spec = template.clone();
            spec.seed = derive_seed(template.seed, r as u64);
            let mut opts = cfg.options.clone();
            opts.seed = derive_seed(template.seed ^ 0xa5a5, r as u64);
            let data = spec.generate_with(&rule).ok()?;
            let report = decompose(&data, Some(&rule), &opts).ok()?;
            Some(extract(&report, &truths))
        })
        .collect();

    // Keys in first-seen order.
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in results.iter().flatten() {
        for (name, est, _) in r {
            if !keys.iter().any(|(a, b)| a == name && b == est) {
                keys.push((name.clone(), est.clone()));
            }
        }
    }
    let mut rows = Vec::new();
    for (name, est) in keys {
        let Some(truth) = truth_of(&name, &truths) else { continue };
        let found: Vec<&EstimateWithCI> = results
            .iter()
            .flatten()
            .filter_map(|r| r.iter().find(|(a, b, _)| *a == name && *b == est).map(|(_, _, e)| e))
            .collect();
        let k = found.len();
        if k == 0 {
            continue;
        }
        let mean_estimate = found.iter().map(|e| e.point).sum::<f64>() / k as f64;
        rows.push(CoverageRow {
            target: name,
            estimator: est,
            n: template.n_target,
            truth,
            coverage: found.iter().filter(|e| e.covers(truth)).count() as f64 / k as f64,
            mean_width: found.iter().map(|e| e.ci_hi - e.ci_lo).sum::<f64>() / k as f64,
            mean_estimate,
            coverage_of_mean: found.iter().filter(|e| e.covers(mean_estimate)).count() as f64 / k as f64,
            reps: k,
            failed_reps: cfg.reps - k,
        });
    }
    Ok(CoverageTable {
        kind: template.kind,
        n: template.n_target,
        reps: cfg.reps,
        alpha: cfg.options.alpha,
        truths,
        rows,
    })
}
