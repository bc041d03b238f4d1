//! End-to-end estimation: split, fit nuisances, aggregate terms, subset
//! values and Shapley attributions.
//!
//! Every fold (one for the default sample split, `K` with cross-fitting)
//! produces per-row terms on its evaluation rows. The terms of all folds are
//! pooled before point estimates and influence values are formed, so the
//! single-split and cross-fitted paths share all the final arithmetic.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_debiased, aggregate_plugin, finalize, outcome_variation_terms, AggregateInputs};
use crate::covariate::{self, covariate_num_terms, fit_covariate_subset, CovariateTerms};
use crate::dataset::{cross_fit_plans, split, Dataset, SplitPlan, DEFAULT_TRAIN_FRACTION, SOURCE, TARGET};
use crate::error::{Error, Result};
use crate::estimate::{check_alpha, domain_mean_influence, one_minus_ratio, DomainShares, SubsetValue, DEFAULT_ALPHA};
use crate::learners::{compact_grid, default_grid, LearnerConfig, LearnerSpec, DEFAULT_BINS, DEFAULT_CLIP, DEFAULT_FOLDS};
use crate::loss::PredictionRule;
use crate::nuisance::{fit_base, BaseNeeds, BaseNuisances, NuisanceOptions};
use crate::outcome::{self, fit_outcome_subset, outcome_num_rows, OutcomeEval, OutcomeShared, DEFAULT_INNER_SUBSAMPLE};
use crate::report::{AggregateSection, DecompositionReport, DetailedSection, Metadata, StageFailure, Warning, SCHEMA_VERSION};
use crate::shapley::{sample_subsets, solve_shapley, SubsetSamplePlan, DEFAULT_GAMMA};
use crate::subset::{derive_seed, Subset};

/// Fraction of evaluation rows with a clamped density ratio above which a
/// warning is raised.
pub const CLAMP_WARN_FRACTION: f64 = 0.05;

const SPLIT_KEY: u64 = 1;
const SUBSETS_KEY: u64 = 2;
const FOLD_KEY: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Aggregate,
    DetailedCovariate,
    DetailedOutcome,
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggregate" => Ok(Target::Aggregate),
            "detailed_covariate" | "covariate" => Ok(Target::DetailedCovariate),
            "detailed_outcome" | "outcome" => Ok(Target::DetailedOutcome),
            other => Err(Error::Config(format!(
                "unknown target {other:?}; expected aggregate, detailed_covariate or detailed_outcome"
            ))),
        }
    }
}

/// Named candidate grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    Default,
    Compact,
}

/// Every estimation setting that is not input/output plumbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationOptions {
    pub targets: Vec<Target>,
    /// Two-sided level: intervals have coverage `1 - alpha`.
    pub alpha: f64,
    /// Number of risk bins for the outcome decomposition.
    pub bins: usize,
    /// Subset draws per evaluation row for the Shapley approximation.
    pub gamma: f64,
    pub train_fraction: f64,
    /// Cross-validation folds for learner selection.
    pub folds: usize,
    /// Partner rows per outer row in the outcome numerator.
    pub inner_subsample: usize,
    /// Probability clamp applied before density-ratio odds are formed.
    pub clip: (f64, f64),
    pub seed: u64,
    pub grid: GridPreset,
    /// Explicit candidate list; overrides `grid` when present.
    pub candidates: Option<Vec<LearnerSpec>>,
    /// Number of cross-fitting folds; `None` uses a single split.
    pub cross_fit: Option<usize>,
    /// Also report the plug-in aggregate estimates.
    pub plugin: bool,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            targets: vec![Target::Aggregate, Target::DetailedCovariate, Target::DetailedOutcome],
            alpha: DEFAULT_ALPHA,
            bins: DEFAULT_BINS,
            gamma: DEFAULT_GAMMA,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            folds: DEFAULT_FOLDS,
            inner_subsample: DEFAULT_INNER_SUBSAMPLE,
            clip: DEFAULT_CLIP,
            seed: 0,
            grid: GridPreset::Default,
            candidates: None,
            cross_fit: None,
            plugin: false,
        }
    }
}

impl EstimationOptions {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::Config("at least one target is required".into()));
        }
        check_alpha(self.alpha)?;
        if self.bins < 2 {
            return Err(Error::Config(format!("bins must be at least 2, got {}", self.bins)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0,1), got {}",
                self.train_fraction
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.inner_subsample == 0 {
            return Err(Error::Config("inner_subsample must be positive".into()));
        }
        let (lo, hi) = self.clip;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!("clip must satisfy 0 < lo < hi < 1, got ({lo}, {hi})")));
        }
        if let Some(k) = self.cross_fit {
            if k < 2 {
                return Err(Error::Config(format!("cross_fit needs at least 2 folds, got {k}")));
            }
        }
        let candidates = self.candidate_list();
        if candidates.is_empty() {
            return Err(Error::Config("the learner candidate list is empty".into()));
        }
        for c in &candidates {
            c.validate()?;
        }
        Ok(())
    }

    pub fn candidate_list(&self) -> Vec<LearnerSpec> {
        match (&self.candidates, self.grid) {
            (Some(c), _) => c.clone(),
            (None, GridPreset::Default) => default_grid(),
            (None, GridPreset::Compact) => compact_grid(),
        }
    }

    pub fn wants(&self, t: Target) -> bool {
        self.targets.contains(&t)
    }

    fn nuisance_options(&self) -> NuisanceOptions {
        NuisanceOptions {
            learners: LearnerConfig {
                candidates: self.candidate_list(),
                folds: self.folds,
                clip: self.clip,
            },
            bins: self.bins,
        }
    }
}

/// Collected warnings, diagnostics and learner selections.
#[derive(Default)]
struct Notes {
    warnings: Vec<Warning>,
    diagnostics: BTreeMap<String, f64>,
    selections: BTreeMap<String, String>,
}

impl Notes {
    fn warn(&mut self, stage: &str, code: &str, message: String, value: Option<f64>) {
        self.warnings.push(Warning {
            stage: stage.to_string(),
            code: code.to_string(),
            message,
            value,
        });
    }

    fn clamp_diagnostic(&mut self, stage: &str, key: String, fraction: f64) {
        if fraction > CLAMP_WARN_FRACTION {
            self.warn(
                stage,
                "clamped_ratio",
                format!("{:.1}% of evaluation rows have a clamped density ratio for {key}", 100.0 * fraction),
                Some(fraction),
            );
        }
        self.diagnostics.insert(format!("clamped_fraction/{key}"), fraction);
    }

    fn merge_selections(&mut self, prefix: &str, sel: &BTreeMap<String, String>) {
        for (k, v) in sel {
            self.selections.insert(format!("{prefix}{k}"), v.clone());
        }
    }
}

/// Per-row terms of the covariate decomposition on one fold.
struct CovariateFold {
    den: Vec<f64>,
    /// One term vector per subset, aligned with the subset list.
    nums: Vec<Vec<f64>>,
}

/// Per-row terms of the outcome decomposition on one fold.
struct OutcomeFold {
    den: Vec<f64>,
    nums: Vec<Vec<f64>>,
}

struct FoldResult {
    inputs: AggregateInputs,
    covariate: Option<Result<CovariateFold>>,
    outcome: Option<Result<OutcomeFold>>,
    notes: Notes,
}

/// Per-row numerator terms of one subset, with the learner selections and
/// diagnostic of its nuisance fit (absent for the anchor subsets).
type SubsetRows = (Vec<f64>, Option<(BTreeMap<String, String>, f64)>);

#[allow(clippy::too_many_arguments)]
fn covariate_fold(
    data: &Dataset,
    plan: &SplitPlan,
    base: &BaseNuisances,
    values: &crate::nuisance::BaseValues,
    subsets: &[Subset],
    opts: &NuisanceOptions,
    seed: u64,
    notes: &mut Notes,
    prefix: &str,
) -> Result<CovariateFold> {
    let m2 = data.m2();
    let mu_10_model = base
        .mu_10
        .as_ref()
        .ok_or_else(|| Error::Internal("mu_10 was not fitted".into()))?;
    let mu_10 = mu_10_model.predict(&data.design(&plan.eval, &[]));
    let den = covariate_num_terms(values, &mu_10, &CovariateTerms::empty_anchor(values));
    let fitted: Vec<Result<SubsetRows>> = subsets
        .par_iter()
        .map(|s| {
            if s.is_empty() {
                return Ok((den.clone(), None));
            }
            if s.is_full(m2) {
                let t = CovariateTerms::full_anchor(values, &mu_10);
                return Ok((covariate_num_terms(values, &mu_10, &t), None));
            }
            let sub = fit_covariate_subset(data, &plan.train, base, s, opts, seed)?;
            let xs = data.design_subset(&plan.eval, s);
            let clamped = sub.pi_1s0.clamped_fraction(&xs);
            let t = CovariateTerms::from_nuisances(&sub, data, &plan.eval);
            Ok((covariate_num_terms(values, &mu_10, &t), Some((sub.selections, clamped))))
        })
        .collect();
    let mut nums = Vec::with_capacity(subsets.len());
    for (s, r) in subsets.iter().zip(fitted) {
        let (terms, extra) = r?;
        if let Some((sel, clamped)) = extra {
            notes.merge_selections(prefix, &sel);
            notes.clamp_diagnostic("detailed_covariate", format!("{prefix}pi_1s0{s}"), clamped);
        }
        nums.push(terms);
    }
    Ok(CovariateFold { den, nums })
}

#[allow(clippy::too_many_arguments)]
fn outcome_fold(
    data: &Dataset,
    plan: &SplitPlan,
    base: &BaseNuisances,
    values: &crate::nuisance::BaseValues,
    subsets: &[Subset],
    opts: &EstimationOptions,
    nopts: &NuisanceOptions,
    seed: u64,
    notes: &mut Notes,
    prefix: &str,
) -> Result<OutcomeFold> {
    let m2 = data.m2();
    let shared = OutcomeShared::from_base(base, opts.bins)?;
    let eval = OutcomeEval::new(data, &plan.eval, &shared);
    let edge = eval.edge_fraction(opts.bins);
    notes.diagnostics.insert(format!("bin_edge_fraction/{prefix}"), edge);
    if edge > outcome::EDGE_WARN_FRACTION {
        notes.warn(
            "detailed_outcome",
            "bin_edge",
            format!(
                "{:.1}% of evaluation rows have a source risk on a bin edge; the binned estimand may not be smooth",
                100.0 * edge
            ),
            Some(edge),
        );
    }
    let den = outcome_variation_terms(&eval.loss, &eval.domain, &eval.mu_0, &eval.mu_1, &values.pi_110);
    let computed: Vec<Result<SubsetRows>> = subsets
        .par_iter()
        .map(|s| {
            if s.is_full(m2) {
                return Ok((outcome_num_rows(&eval, &shared, s, None, opts.inner_subsample, seed)?, None));
            }
            let sub = fit_outcome_subset(data, &plan.train, &shared, s, nopts, seed)?;
            let g = outcome_num_rows(&eval, &shared, s, Some(&sub), opts.inner_subsample, seed)?;
            Ok((g, Some((sub.selections, sub.phantom.consistent_fraction))))
        })
        .collect();
    let mut nums = Vec::with_capacity(subsets.len());
    for (s, r) in subsets.iter().zip(computed) {
        let (g, extra) = r?;
        if let Some((sel, consistent)) = extra {
            notes.merge_selections(prefix, &sel);
            notes
                .diagnostics
                .insert(format!("phantom_consistent_fraction/{prefix}{s}"), consistent);
        }
        nums.push(g);
    }
    Ok(OutcomeFold { den, nums })
}

fn run_fold(
    data: &Dataset,
    plan: &SplitPlan,
    rule: Option<&PredictionRule>,
    opts: &EstimationOptions,
    subsets: &[Subset],
    seed: u64,
    prefix: &str,
) -> Result<FoldResult> {
    let nopts = opts.nuisance_options();
    let needs = BaseNeeds {
        covariate: opts.wants(Target::DetailedCovariate),
        outcome: opts.wants(Target::DetailedOutcome),
    };
    let base = fit_base(data, &plan.train, rule, needs, &nopts, seed)
        .map_err(|e| e.in_stage("nuisance", "check that both domains have enough rows and varied columns"))?;
    let mut notes = Notes::default();
    notes.merge_selections(prefix, &base.selections);
    let values = base.values(data, &plan.eval);
    notes.clamp_diagnostic("aggregate", format!("{prefix}pi_100"), values.clamped.0);
    notes.clamp_diagnostic("aggregate", format!("{prefix}pi_110"), values.clamped.1);
    let inputs = BaseNuisances::aggregate_inputs(&values);

    let covariate = needs
        .covariate
        .then(|| covariate_fold(data, plan, &base, &values, subsets, &nopts, seed, &mut notes, prefix));
    let outcome = needs
        .outcome
        .then(|| outcome_fold(data, plan, &base, &values, subsets, opts, &nopts, seed, &mut notes, prefix));
    Ok(FoldResult {
        inputs,
        covariate,
        outcome,
        notes,
    })
}

fn concat_inputs(folds: &[FoldResult]) -> AggregateInputs {
    let mut out = AggregateInputs {
        loss: Vec::new(),
        domain: Vec::new(),
        mu_00: Vec::new(),
        mu_dot0: Vec::new(),
        pi_100: Vec::new(),
        pi_110: Vec::new(),
    };
    for f in folds {
        out.loss.extend_from_slice(&f.inputs.loss);
        out.domain.extend_from_slice(&f.inputs.domain);
        out.mu_00.extend_from_slice(&f.inputs.mu_00);
        out.mu_dot0.extend_from_slice(&f.inputs.mu_dot0);
        out.pi_100.extend_from_slice(&f.inputs.pi_100);
        out.pi_110.extend_from_slice(&f.inputs.pi_110);
    }
    out
}

/// Pools per-fold terms into subset values and checks the denominator.
fn pooled_values(
    subsets: &[Subset],
    dens: Vec<&[f64]>,
    nums: Vec<&[Vec<f64>]>,
    inputs: &AggregateInputs,
    tolerance: f64,
    what: &str,
    alpha: f64,
) -> Result<Vec<SubsetValue>> {
    let domain = &inputs.domain;
    let shares = DomainShares::new(domain)?;
    let den_terms: Vec<f64> = dens.concat();
    let (den, psi_den) = domain_mean_influence(&den_terms, domain, shares);
    let scale = inputs.loss.iter().map(|l| l * l).sum::<f64>() / inputs.loss.len() as f64;
    if !(den.is_finite() && den > tolerance * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate(format!(
            "undefined: no {what} variation to explain (denominator {den:.3e})"
        )));
    }
    subsets
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let g: Vec<f64> = nums.iter().flat_map(|f| f[k].iter().copied()).collect();
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite {what} numerator for subset {s}")));
            }
            let (num, psi) = domain_mean_influence(&g, domain, shares);
            Ok(one_minus_ratio(s.clone(), num, &psi, den, &psi_den, alpha))
        })
        .collect()
}

fn detailed_section(
    target: &str,
    stage: &str,
    values: Result<Vec<SubsetValue>>,
    plan: &SubsetSamplePlan,
    data: &Dataset,
    alpha: f64,
    notes: &mut Notes,
) -> Result<DetailedSection> {
    let values = values?;
    for v in &values {
        if v.num < -3.0 * v.num_se {
            notes.warn(
                stage,
                "negative_numerator",
                format!(
                    "numerator of subset {} is {:.3e}, below -3 standard errors; nuisance models may be poor",
                    v.subset, v.num
                ),
                Some(v.num),
            );
        }
    }
    let attribution = solve_shapley(&values, plan, alpha)?;
    for w in &attribution.warnings {
        notes.warn(stage, "shapley", w.clone(), None);
    }
    Ok(DetailedSection::new(target, &attribution, data.z_names(), values))
}

fn failure(stage: &str, err: &Error, hint: &str) -> StageFailure {
    StageFailure {
        stage: stage.to_string(),
        message: err.to_string(),
        hint: hint.to_string(),
        exit_code: err.exit_code(),
    }
}

/// Runs every requested target on `data`.
///
/// `rule` is the explained model's prediction rule; the outcome
/// decomposition needs it. Failures of the aggregate stage (and of the
/// shared nuisances) are returned as errors; failures of a detailed target
/// leave its section `null` and are listed in `failures`.
pub fn decompose(data: &Dataset, rule: Option<&PredictionRule>, opts: &EstimationOptions) -> Result<DecompositionReport> {
    opts.validate()?;
    let seed = opts.seed;
    let plans = match opts.cross_fit {
        Some(k) => cross_fit_plans(data, k, derive_seed(seed, SPLIT_KEY)),
        None => split(data, opts.train_fraction, derive_seed(seed, SPLIT_KEY)).map(|p| vec![p]),
    }
    .map_err(|e| e.in_stage("split", "each domain needs enough rows for training and evaluation"))?;
    let n_eval: usize = plans.iter().map(|p| p.eval.len()).sum();
    let n_train = if plans.len() == 1 { plans[0].train.len() } else { data.n() };

    let detailed = opts.wants(Target::DetailedCovariate) || opts.wants(Target::DetailedOutcome);
    let subset_plan = if detailed {
        Some(
            sample_subsets(data.m2(), opts.gamma, n_eval, derive_seed(seed, SUBSETS_KEY))
                .map_err(|e| e.in_stage("subset_sampling", "increase gamma"))?,
        )
    } else {
        None
    };
    let subsets: Vec<Subset> = subset_plan.as_ref().map(|p| p.unique.clone()).unwrap_or_default();

    let mut folds = Vec::with_capacity(plans.len());
    for (k, plan) in plans.iter().enumerate() {
        let prefix = if plans.len() == 1 { String::new() } else { format!("fold{k}/") };
        folds.push(run_fold(data, plan, rule, opts, &subsets, derive_seed(seed, FOLD_KEY + k as u64), &prefix)?);
    }

    let mut notes = Notes::default();
    for f in &mut folds {
        let n = std::mem::take(&mut f.notes);
        notes.warnings.extend(n.warnings);
        notes.diagnostics.extend(n.diagnostics);
        notes.selections.extend(n.selections);
    }

    let inputs = concat_inputs(&folds);
    let mean = |d: u8| {
        let (s, c) = inputs
            .loss
            .iter()
            .zip(&inputs.domain)
            .filter(|(_, &dd)| dd == d)
            .fold((0.0, 0usize), |(s, c), (l, _)| (s + l, c + 1));
        s / c as f64
    };
    let aggregate = if opts.wants(Target::Aggregate) {
        let deb = finalize(&aggregate_debiased(&inputs)?, opts.alpha).map_err(|e| e.in_stage("aggregate", "check alpha"))?;
        let plug = if opts.plugin {
            Some(finalize(&aggregate_plugin(&inputs)?, opts.alpha)?)
        } else {
            None
        };
        for (name, e) in deb.terms() {
            if e.se == 0.0 {
                notes.warn(
                    "aggregate",
                    "zero_se",
                    format!("{name} has zero standard error; its interval has zero width"),
                    None,
                );
            }
        }
        Some(AggregateSection::new(mean(SOURCE), mean(TARGET), &deb, plug.as_ref()))
    } else {
        None
    };

    let mut failures = Vec::new();
    let mut detailed_covariate = None;
    let mut detailed_outcome = None;
    if let Some(plan) = &subset_plan {
        if opts.wants(Target::DetailedCovariate) {
            let parts: Result<Vec<&CovariateFold>> = folds
                .iter()
                .map(|f| match f.covariate.as_ref().expect("covariate fold computed") {
                    Ok(c) => Ok(c),
                    Err(e) => Err(clone_error(e)),
                })
                .collect();
            let values = parts.and_then(|parts| {
                pooled_values(
                    &subsets,
                    parts.iter().map(|p| p.den.as_slice()).collect(),
                    parts.iter().map(|p| p.nums.as_slice()).collect(),
                    &inputs,
                    covariate::DEN_TOLERANCE,
                    "covariate-shift",
                    opts.alpha,
                )
            });
            match detailed_section("covariate", "detailed_covariate", values, plan, data, opts.alpha, &mut notes) {
                Ok(s) => detailed_covariate = Some(s),
                Err(e) => failures.push(failure(
                    "detailed_covariate",
                    &e,
                    "the covariate decomposition needs a conditional covariate shift; try other W/Z roles or more data",
                )),
            }
        }
        if opts.wants(Target::DetailedOutcome) {
            let parts: Result<Vec<&OutcomeFold>> = folds
                .iter()
                .map(|f| match f.outcome.as_ref().expect("outcome fold computed") {
                    Ok(c) => Ok(c),
                    Err(e) => Err(clone_error(e)),
                })
                .collect();
            let values = parts.and_then(|parts| {
                pooled_values(
                    &subsets,
                    parts.iter().map(|p| p.den.as_slice()).collect(),
                    parts.iter().map(|p| p.nums.as_slice()).collect(),
                    &inputs,
                    outcome::DEN_TOLERANCE,
                    "outcome-shift",
                    opts.alpha,
                )
            });
            match detailed_section("outcome", "detailed_outcome", values, plan, data, opts.alpha, &mut notes) {
                Ok(s) => detailed_outcome = Some(s),
                Err(e) => failures.push(failure(
                    "detailed_outcome",
                    &e,
                    "the outcome decomposition needs a prediction rule (pred_col, or 0-1 loss_col) and an outcome shift; try fewer bins or more data",
                )),
            }
        }
    }

    Ok(DecompositionReport {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata {
            n0: data.count(SOURCE),
            n1: data.count(TARGET),
            n_train,
            n_eval,
            m1: data.m1(),
            m2: data.m2(),
            w_names: data.w_names().to_vec(),
            z_names: data.z_names().to_vec(),
            seed,
            prediction_rule: match rule {
                Some(PredictionRule::Linear(_)) => "linear",
                Some(PredictionRule::Surrogate { .. }) => "surrogate",
                None => "none",
            }
            .to_string(),
            options: opts.clone(),
            selected_learners: notes.selections,
            diagnostics: notes.diagnostics,
        },
        aggregate,
        detailed_covariate,
        detailed_outcome,
        warnings: notes.warnings,
        failures,
    })
}

/// Errors are not `Clone` (they wrap I/O errors); fold errors only need
/// their kind and message to be carried into the report.
fn clone_error(e: &Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(m.clone()),
        Error::Data(m) => Error::Data(m.clone()),
        Error::Learner(m) => Error::Learner(m.clone()),
        Error::Degenerate(m) => Error::Degenerate(m.clone()),
        Error::Stage { stage, hint, source } => Error::Stage {
            stage,
            hint: hint.clone(),
            source: Box::new(clone_error(source)),
        },
        other => Error::Internal(other.to_string()),
    }
}
