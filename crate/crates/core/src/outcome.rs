//! Value of partial conditional outcome shifts.
//!
//! The hypothesized shift restricted to `s` recalibrates the source risk
//! using only `(W, Z_s, Q_bin)`, where `Q_bin` is the binned source risk:
//! the outcome at `x` is drawn from `p_1(Y | W, Z_s, Q_bin = q_bin(x))`.
//! With `μ_s(x)` the expected loss under that shift and
//! `ξ_s = μ_··1 - μ_s`, the unexplained variation is `num(s) = E_1[ξ_s^2]`,
//! the total is `den = E_1[(μ_··1 - μ_··0)^2]`, and the value is
//! `1 - num(s)/den`.
//!
//! The numerator is a one-step corrected V-statistic over pairs of target
//! evaluation rows. For an outer row `i` and a partner `j`, the hybrid
//! point `x̃ = (w_i, z_{s,i}, z_{-s,j})` is weighted by the density ratio
//! `π = p_1(z_{-s} | w, z_s, Q_bin = Q_i) / p_1(z_{-s})`, estimated by
//! classifying target rows against copies whose `Z_{-s}` block is permuted.
//! The ratio is exactly zero when `q_bin(x̃) ≠ Q_i`.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{outcome_variation, InfluenceEstimate};
use crate::dataset::{Dataset, TARGET};
use crate::error::{Error, Result};
use crate::estimate::{domain_mean_influence, one_minus_ratio, DomainShares, SubsetValue};
use crate::learners::{DensityRatioModel, FittedModel, RiskModel};
use crate::loss::PredictionRule;
use crate::nuisance::{expected_loss, fit_classifier, keys, BaseNuisances, NuisanceOptions};
use crate::subset::{derive_seed, Subset};

/// Default number of partner rows sampled per outer row.
pub const DEFAULT_INNER_SUBSAMPLE: usize = 2000;

/// Relative tolerance below which the total outcome-shift variation is
/// treated as zero (times the mean squared loss).
pub const DEN_TOLERANCE: f64 = 1e-8;

/// Tolerance used by the bin-edge diagnostic.
pub const EDGE_TOLERANCE: f64 = 1e-12;

/// Fraction of rows near a bin edge above which a warning is raised.
pub const EDGE_WARN_FRACTION: f64 = 0.01;

/// Models shared by every subset of the outcome decomposition.
#[derive(Debug, Clone)]
pub struct OutcomeShared {
    pub m1: usize,
    pub m2: usize,
    pub rule: PredictionRule,
    /// Source risk `q(w, z) = p_0(Y=1 | w, z)` with its binning.
    pub risk: RiskModel,
    /// Target risk `p_1(Y=1 | w, z)`.
    pub risk_1: FittedModel,
}

impl OutcomeShared {
    pub fn from_base(base: &BaseNuisances, bins: usize) -> Result<Self> {
        let rule = base.rule.clone().ok_or_else(|| {
            Error::Config(
                "the outcome decomposition needs the model's prediction rule (pred_col or rule) to evaluate losses at unobserved points"
                    .into(),
            )
        })?;
        let q = base
            .mu_dot0
            .outcome_model()
            .ok_or_else(|| Error::Internal("source outcome model missing".into()))?;
        let risk_1 = base
            .risk_1
            .clone()
            .ok_or_else(|| Error::Internal("target outcome model missing".into()))?;
        Ok(OutcomeShared {
            m1: base.m1,
            m2: base.m2,
            rule,
            risk: RiskModel {
                classifier: q.clone(),
                bins,
            },
            risk_1,
        })
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        x.split_at(self.m1)
    }

    /// `μ_··0(x)` from the source risk.
    pub fn mu_0(&self, x: &[f64]) -> f64 {
        let (w, z) = self.split(x);
        expected_loss(&self.rule, w, z, self.risk.q(x))
    }

    /// `μ_··1(x)` from the target risk.
    pub fn mu_1(&self, x: &[f64]) -> f64 {
        let (w, z) = self.split(x);
        expected_loss(&self.rule, w, z, self.risk_1.predict_row(x).clamp(0.0, 1.0))
    }
}

/// Density ratio for the hybrid points of one subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomRatio {
    pub subset: Subset,
    pub model: DensityRatioModel,
    /// Fraction of permuted rows whose recomputed bin matched the attached
    /// bin (the only ones used in training).
    pub consistent_fraction: f64,
}

/// Writes `[w | z_s | z_{-s} | q]` into `out`.
fn phantom_features(m1: usize, x: &[f64], s: &Subset, rest: &[usize], q: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(&x[..m1]);
    let z = &x[m1..];
    out.extend(s.indices().iter().map(|&j| z[j]));
    out.extend(rest.iter().map(|&j| z[j]));
    out.push(q);
}

/// Writes `[w | z_s | q]` into `out`.
fn shift_features(m1: usize, x: &[f64], s: &Subset, q: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(&x[..m1]);
    let z = &x[m1..];
    out.extend(s.indices().iter().map(|&j| z[j]));
    out.push(q);
}

/// Fits the hybrid-point density ratio for a strict subset `s` on target
/// training rows.
///
/// Each target row keeps its `(w, z_s)` and its own bin `Q`; a permuted
/// copy pairs them with another row's `z_{-s}`. Permuted copies whose own
/// bin differs from the attached `Q` cannot occur under the conditional
/// distribution, so they are dropped and the ratio there is zero. The
/// classifier separates original rows from the remaining copies, and the
/// odds are rescaled by `n_permuted / n_original` to undo the filtering.
pub fn fit_phantom_ratio(
    data: &Dataset,
    target_train: &[usize],
    s: &Subset,
    shared: &OutcomeShared,
    opts: &NuisanceOptions,
    seed: u64,
) -> Result<PhantomRatio> {
    let m2 = data.m2();
    if s.is_full(m2) {
        return Err(Error::Internal("the full subset needs no hybrid-point ratio".into()));
    }
    let rest = s.complement(m2);
    let m1 = data.m1();
    let xt = data.design_full(target_train);
    let n = xt.rows();
    let q: Vec<f64> = (0..n).map(|i| shared.risk.q_bin(xt.row(i))).collect();

    let width = m1 + m2 + 1;
    let mut rows: Vec<f64> = Vec::with_capacity(2 * n * width);
    let mut buf = Vec::with_capacity(width);
    for (i, &qi) in q.iter().enumerate() {
        phantom_features(m1, xt.row(i), s, &rest, qi, &mut buf);
        rows.extend_from_slice(&buf);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        derive_seed(seed, keys::PHANTOM_PERM),
        s.stable_hash(),
    )));
    let mut hybrid = vec![0.0; m1 + m2];
    let mut n_consistent = 0;
    for (i, &qi) in q.iter().enumerate() {
        hybrid.copy_from_slice(xt.row(i));
        let donor = xt.row(perm[i]);
        for &j in &rest {
            hybrid[m1 + j] = donor[m1 + j];
        }
        if shared.risk.q_bin(&hybrid) != qi {
            continue;
        }
        phantom_features(m1, &hybrid, s, &rest, qi, &mut buf);
        rows.extend_from_slice(&buf);
        n_consistent += 1;
    }
    if n_consistent == 0 {
        return Err(Error::Degenerate(format!(
            "no permuted row of subset {s} stays in its risk bin; use fewer bins"
        )));
    }
    let x = crate::matrix::Matrix::from_row_major(n + n_consistent, width, rows);
    let mut y = vec![1.0; n];
    y.extend(std::iter::repeat_n(0.0, n_consistent));
    let fit = fit_classifier(&x, &y, opts, derive_seed(derive_seed(seed, keys::PHANTOM), s.stable_hash()))?;
    let mut model = DensityRatioModel::new(fit.model, n, n, opts.learners.clip);
    model.selected = fit.selected;
    Ok(PhantomRatio {
        subset: s.clone(),
        model,
        consistent_fraction: n_consistent as f64 / n as f64,
    })
}

/// Nuisances specific to one strict subset `s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeSubsetNuisances {
    pub subset: Subset,
    /// `p_1(Y=1 | W, Z_s, Q_bin)` on `[W | Z_s | Q_bin]`.
    pub p_s: FittedModel,
    pub phantom: PhantomRatio,
    pub selections: BTreeMap<String, String>,
}

pub fn fit_outcome_subset(
    data: &Dataset,
    train: &[usize],
    shared: &OutcomeShared,
    s: &Subset,
    opts: &NuisanceOptions,
    seed: u64,
) -> Result<OutcomeSubsetNuisances> {
    let tgt = data.rows_in(train, TARGET);
    let xt = data.design_full(&tgt);
    let m1 = data.m1();
    let width = m1 + s.len() + 1;
    let mut feats = Vec::with_capacity(tgt.len() * width);
    let mut buf = Vec::with_capacity(width);
    for i in 0..xt.rows() {
        let x = xt.row(i);
        shift_features(m1, x, s, shared.risk.q_bin(x), &mut buf);
        feats.extend_from_slice(&buf);
    }
    let feats = crate::matrix::Matrix::from_row_major(tgt.len(), width, feats);
    let fit = fit_classifier(&feats, &data.y_at(&tgt), opts, derive_seed(derive_seed(seed, keys::P_S), s.stable_hash()))?;
    let mut selections = BTreeMap::new();
    selections.insert(format!("p_s{s}"), fit.describe());
    let phantom = fit_phantom_ratio(data, &tgt, s, shared, opts, seed)?;
    selections.insert(
        format!("phantom{s}"),
        crate::nuisance::selected_name(&phantom.model),
    );
    Ok(OutcomeSubsetNuisances {
        subset: s.clone(),
        p_s: fit.model,
        phantom,
        selections,
    })
}

/// Evaluation rows and nuisance values shared across subsets.
#[derive(Debug, Clone)]
pub struct OutcomeEval {
    pub rows: Vec<usize>,
    pub domain: Vec<u8>,
    pub loss: Vec<f64>,
    pub y: Vec<f64>,
    /// `[W | Z]` per evaluation row.
    pub x: crate::matrix::Matrix,
    pub q: Vec<f64>,
    pub q_bin: Vec<f64>,
    pub mu_0: Vec<f64>,
    pub mu_1: Vec<f64>,
    /// Positions (within `rows`) of the target evaluation rows.
    pub target_pos: Vec<usize>,
}

impl OutcomeEval {
    pub fn new(data: &Dataset, rows: &[usize], shared: &OutcomeShared) -> Self {
        let x = data.design_full(rows);
        let n = rows.len();
        let q: Vec<f64> = (0..n).map(|i| shared.risk.q(x.row(i))).collect();
        let q_bin = q.iter().map(|&v| crate::learners::bin_risk_one(v, shared.risk.bins)).collect();
        let domain: Vec<u8> = rows.iter().map(|&i| data.domain()[i]).collect();
        OutcomeEval {
            rows: rows.to_vec(),
            loss: data.loss_at(rows),
            y: data.y_at(rows),
            mu_0: (0..n).map(|i| shared.mu_0(x.row(i))).collect(),
            mu_1: (0..n).map(|i| shared.mu_1(x.row(i))).collect(),
            target_pos: (0..n).filter(|&i| domain[i] == TARGET).collect(),
            domain,
            x,
            q,
            q_bin,
        }
    }

    /// Fraction of evaluation rows whose risk lies within
    /// [`EDGE_TOLERANCE`] of a bin edge.
    pub fn edge_fraction(&self, bins: usize) -> f64 {
        RiskModel::edge_fraction(&self.q, bins, EDGE_TOLERANCE)
    }
}

/// One-step estimate of the total outcome-shift variation
/// `E_1[(μ_··1 - μ_··0)^2]`; fails when it is numerically zero.
pub fn outcome_den(eval: &OutcomeEval, pi_110: &[f64]) -> Result<InfluenceEstimate> {
    let den = outcome_variation(&eval.loss, &eval.domain, &eval.mu_0, &eval.mu_1, pi_110)?;
    let scale = eval.loss.iter().map(|l| l * l).sum::<f64>() / eval.loss.len() as f64;
    let floor = DEN_TOLERANCE * scale.max(f64::MIN_POSITIVE);
    if den.point.is_nan() || den.point <= floor {
        return Err(Error::Degenerate(format!(
            "undefined: no outcome-shift variation to explain (denominator {:.3e})",
            den.point
        )));
    }
    Ok(den)
}

/// Per-target-row numerator terms `ξ^2 + 2ξ(ℓ - μ_··1) + t34`, where `t34`
/// averages `-2 ξ(x̃)(ℓ(x̃, y_i) - μ_s(x̃)) π(x̃, Q_i)` over partner rows.
fn outcome_num_terms(
    eval: &OutcomeEval,
    shared: &OutcomeShared,
    sub: &OutcomeSubsetNuisances,
    inner_subsample: usize,
    seed: u64,
) -> Vec<f64> {
    let m1 = shared.m1;
    let s = &sub.subset;
    let rest = s.complement(shared.m2);
    let n1 = eval.target_pos.len();
    let partners = inner_subsample.min(n1).max(1);
    let stream = derive_seed(derive_seed(seed, keys::INNER), s.stable_hash());

    let mu_s = |x: &[f64], q: f64, buf: &mut Vec<f64>| -> f64 {
        shift_features(m1, x, s, q, buf);
        let p = sub.p_s.predict_row(buf).clamp(0.0, 1.0);
        let (w, z) = x.split_at(m1);
        expected_loss(&shared.rule, w, z, p)
    };

    eval.target_pos
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut buf = Vec::new();
            let xi = eval.x.row(i);
            let qi = eval.q_bin[i];
            let xi_i = eval.mu_1[i] - mu_s(xi, qi, &mut buf);
            let t1 = xi_i * xi_i;
            let t2 = 2.0 * xi_i * (eval.loss[i] - eval.mu_1[i]);

            let chosen: Vec<usize> = if partners == n1 {
                (0..n1).collect()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(stream, k as u64));
                index::sample(&mut rng, n1, partners).into_vec()
            };
            let mut hybrid = xi.to_vec();
            let (wi, _) = xi.split_at(m1);
            let yi = eval.y[i];
            let mut acc = 0.0;
            for c in chosen {
                let donor = eval.x.row(eval.target_pos[c]);
                for &j in &rest {
                    hybrid[m1 + j] = donor[m1 + j];
                }
                if shared.risk.q_bin(&hybrid) != qi {
                    continue;
                }
                phantom_features(m1, &hybrid, s, &rest, qi, &mut buf);
                let pi = sub.phantom.model.ratio_row(&buf);
                let mus = mu_s(&hybrid, qi, &mut buf);
                let xi_h = shared.mu_1(&hybrid) - mus;
                let loss_h = shared.rule.loss(wi, &hybrid[m1..], yi);
                acc += -2.0 * xi_h * (loss_h - mus) * pi;
            }
            t1 + t2 + acc / partners as f64
        })
        .collect()
}

/// Per-evaluation-row numerator terms of subset `s` (zero on source rows).
/// `sub` is `None` for the full set, where the shifted model equals `μ_··1`
/// and every term vanishes.
pub fn outcome_num_rows(
    eval: &OutcomeEval,
    shared: &OutcomeShared,
    s: &Subset,
    sub: Option<&OutcomeSubsetNuisances>,
    inner_subsample: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; eval.rows.len()];
    match sub {
        None if s.is_full(shared.m2) => {}
        None => return Err(Error::Internal(format!("missing outcome nuisances for subset {s}"))),
        Some(sub) => {
            let t = outcome_num_terms(eval, shared, sub, inner_subsample, seed);
            for (&pos, v) in eval.target_pos.iter().zip(t) {
                g[pos] = v;
            }
        }
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite outcome numerator for subset {s}")));
    }
    Ok(g)
}

/// `v_{Y,bin}(s) = 1 - num(s)/den` with a delta-method interval.
#[allow(clippy::too_many_arguments)]
pub fn value_conditional_outcome(
    eval: &OutcomeEval,
    shared: &OutcomeShared,
    s: &Subset,
    sub: Option<&OutcomeSubsetNuisances>,
    den: &InfluenceEstimate,
    alpha: f64,
    inner_subsample: usize,
    seed: u64,
) -> Result<SubsetValue> {
    let shares = DomainShares::new(&eval.domain)?;
    let g = outcome_num_rows(eval, shared, s, sub, inner_subsample, seed)?;
    let (num, psi_num) = domain_mean_influence(&g, &eval.domain, shares);
    Ok(one_minus_ratio(s.clone(), num, &psi_num, den.point, &den.psi, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn eval(domain: Vec<u8>, loss: Vec<f64>, mu_0: Vec<f64>, mu_1: Vec<f64>) -> OutcomeEval {
        let n = domain.len();
        OutcomeEval {
            rows: (0..n).collect(),
            target_pos: (0..n).filter(|&i| domain[i] == TARGET).collect(),
            y: loss.clone(),
            x: Matrix::zeros(n, 1),
            q: vec![0.5; n],
            q_bin: vec![0.5; n],
            domain,
            loss,
            mu_0,
            mu_1,
        }
    }

    #[test]
    fn no_outcome_shift_is_degenerate() {
        let e = eval(vec![0, 0, 1, 1], vec![0.0, 1.0, 1.0, 0.0], vec![0.3; 4], vec![0.3; 4]);
        let err = outcome_den(&e, &[1.0; 4]).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn den_is_mean_squared_gap_when_corrections_vanish() {
        let mu_0 = vec![0.2, 0.4, 0.1, 0.5];
        let mu_1 = vec![0.2, 0.4, 0.4, 0.3];
        // Losses equal to their conditional means zero the correction terms.
        let loss = vec![0.2, 0.4, 0.4, 0.3];
        let e = eval(vec![0, 0, 1, 1], loss, mu_0, mu_1);
        let den = outcome_den(&e, &[1.0; 4]).unwrap();
        assert!((den.point - (0.09 + 0.04) / 2.0).abs() < 1e-12);
    }
}
