//! Shapley attributions from sampled variable subsets.
//!
//! Subsets are drawn with probability proportional to the Shapley kernel,
//! each unique subset is evaluated once, and the attributions solve a
//! weighted least-squares fit of subset values on membership indicators,
//! with the intercept fixed at `v(∅)` and the fit at the full set fixed at
//! `v(full)`. Interval widths combine the estimation noise of the subset
//! values (propagated through the linear solution map) with the noise from
//! sampling subsets.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{influence_se, z_crit, EstimateWithCI, SubsetValue};
use crate::subset::Subset;

/// Default ratio of subset draws to evaluation rows.
pub const DEFAULT_GAMMA: f64 = 1.0;

/// Tolerance of the efficiency constraint.
pub const EFFICIENCY_TOLERANCE: f64 = 1e-8;

/// Lower bound on `1 - leverage` in the leverage-corrected sampling
/// variance; a draw that alone determines a coefficient has zero residual.
const HC3_FLOOR: f64 = 0.05;

/// Sampled subsets with their draw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSamplePlan {
    pub m2: usize,
    pub gamma: f64,
    pub n_draws: usize,
    /// Unique subsets ordered by size, then lexicographically; always
    /// starts with `∅` and ends with the full set.
    pub unique: Vec<Subset>,
    /// Draw count per entry of `unique` (anchors carry 0).
    pub counts: Vec<usize>,
}

impl SubsetSamplePlan {
    /// True when every one of the `2^m2` subsets is present.
    pub fn is_exhaustive(&self) -> bool {
        self.m2 < usize::BITS as usize - 1 && self.unique.len() == 1usize << self.m2
    }

    /// The plan that enumerates all `2^m2` subsets with kernel weights.
    pub fn exhaustive(m2: usize) -> Result<Self> {
        if m2 == 0 || m2 > 20 {
            return Err(Error::Config(format!("cannot enumerate subsets of {m2} variables")));
        }
        let mut unique: Vec<Subset> = (0u64..1 << m2)
            .map(|mask| Subset::new((0..m2).filter(|j| mask >> j & 1 == 1).collect()))
            .collect();
        sort_subsets(&mut unique);
        let counts = vec![0; unique.len()];
        Ok(SubsetSamplePlan {
            m2,
            gamma: f64::INFINITY,
            n_draws: 0,
            unique,
            counts,
        })
    }
}

fn sort_subsets(v: &mut [Subset]) {
    v.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
}

/// Shapley kernel weight `(m-1) / (C(m,k) k (m-k))` of one subset of size
/// `k`, for `0 < k < m`.
pub fn kernel_weight(m: usize, k: usize) -> f64 {
    (m as f64 - 1.0) / (binomial(m, k) * k as f64 * (m - k) as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
}

/// Draws `floor(gamma * n_ev)` subsets from the Shapley kernel (subset
/// size `k` with probability proportional to `(m-1)/(k(m-k))`, then a
/// uniform subset of that size). `∅` and the full set are always included.
pub fn sample_subsets(m2: usize, gamma: f64, n_ev: usize, seed: u64) -> Result<SubsetSamplePlan> {
    if m2 == 0 {
        return Err(Error::Config("Shapley attribution needs at least one variable".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let n_draws = (gamma * n_ev as f64).floor() as usize;
    if n_draws < 2 {
        return Err(Error::Config(format!(
            "gamma * n_eval = {} gives fewer than 2 subset draws",
            gamma * n_ev as f64
        )));
    }
    let mut counts: BTreeMap<Subset, usize> = BTreeMap::new();
    if m2 >= 2 {
        let sizes: Vec<usize> = (1..m2).collect();
        let size_w: Vec<f64> = sizes
            .iter()
            .map(|&k| (m2 as f64 - 1.0) / (k as f64 * (m2 - k) as f64))
            .collect();
        let size_dist = WeightedIndex::new(&size_w).map_err(|e| Error::Internal(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n_draws {
            let k = sizes[size_dist.sample(&mut rng)];
            let s = Subset::new(index::sample(&mut rng, m2, k).into_vec());
            *counts.entry(s).or_insert(0) += 1;
        }
    }
    counts.insert(Subset::empty(), 0);
    counts.insert(Subset::full(m2), 0);
    let mut pairs: Vec<(Subset, usize)> = counts.into_iter().collect();
    pairs.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
    let (unique, counts) = pairs.into_iter().unzip();
    Ok(SubsetSamplePlan {
        m2,
        gamma,
        n_draws,
        unique,
        counts,
    })
}

/// Shapley attribution with intervals; `phi[0]` is the anchor `v(∅)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyAttribution {
    pub phi: Vec<EstimateWithCI>,
    pub n_unique_subsets: usize,
    pub n_draws: usize,
    pub exhaustive: bool,
    /// `|sum_j phi_j - (v(full) - v(∅))|`.
    pub efficiency_residual: f64,
    /// Standard errors without the subset-sampling term, for diagnostics.
    pub se_without_sampling: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Weighted least squares on the non-anchor subsets after eliminating the
/// intercept and the efficiency constraint. Returns `phi_1..phi_m`.
struct ReducedSystem {
    /// Rows `x_k = z_k[..m-1] - z_k[m-1]`.
    x: DMatrix<f64>,
    /// `z_{k,m}`: whether the last variable is in subset `k`.
    lasts: Vec<f64>,
    weights: Vec<f64>,
    /// Inverse (or pseudo-inverse) of `X^T W X`.
    gram_inv: DMatrix<f64>,
    pseudo: bool,
}

impl ReducedSystem {
    fn new(subsets: &[&Subset], weights: Vec<f64>, m: usize) -> Result<Self> {
        let k = subsets.len();
        let p = m - 1;
        let mut x = DMatrix::zeros(k, p);
        let lasts: Vec<f64> = subsets.iter().map(|s| if s.contains(m - 1) { 1.0 } else { 0.0 }).collect();
        for (r, s) in subsets.iter().enumerate() {
            let last = lasts[r];
            for j in 0..p {
                x[(r, j)] = (if s.contains(j) { 1.0 } else { 0.0 }) - last;
            }
        }
        let mut gram = DMatrix::zeros(p, p);
        for r in 0..k {
            let row = x.row(r);
            gram += row.transpose() * row * weights[r];
        }
        let scale = (0..p).map(|i| gram[(i, i)].abs()).fold(0.0, f64::max);
        let svd = gram.clone().svd(true, true);
        let min_sv = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let (gram_inv, pseudo) = if scale > 0.0 && min_sv > 1e-10 * scale {
            match gram.clone().try_inverse() {
                Some(inv) => (inv, false),
                None => (pinv(&gram)?, true),
            }
        } else {
            (pinv(&gram)?, true)
        };
        Ok(ReducedSystem {
            x,
            lasts,
            weights,
            gram_inv,
            pseudo,
        })
    }

    /// Solves for `phi_1..phi_m` given `v(∅)`, `v(full)` and non-anchor
    /// values.
    fn solve(&self, v0: f64, vfull: f64, values: &[f64], m: usize) -> (DVector<f64>, DVector<f64>, Vec<f64>) {
        let c = vfull - v0;
        let k = values.len();
        let mut resp = DVector::zeros(k);
        for r in 0..k {
            resp[r] = values[r] - v0 - self.lasts[r] * c;
        }
        let mut rhs = DVector::zeros(m - 1);
        for r in 0..k {
            rhs += self.x.row(r).transpose() * (self.weights[r] * resp[r]);
        }
        let beta = &self.gram_inv * rhs;
        let mut phi = DVector::zeros(m);
        for j in 0..m - 1 {
            phi[j] = beta[j];
        }
        phi[m - 1] = c - beta.sum();
        let resid: Vec<f64> = (0..k).map(|r| resp[r] - (self.x.row(r) * &beta)[0]).collect();
        (phi, beta, resid)
    }
}

fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    m.clone()
        .pseudo_inverse(1e-10 * scale)
        .map_err(|e| Error::Internal(format!("pseudo-inverse failed: {e}")))
}

/// Solves for Shapley values from evaluated subsets.
///
/// `values` must contain every subset of `plan.unique`; each carries its
/// per-row influence vector (all of equal length).
pub fn solve_shapley(values: &[SubsetValue], plan: &SubsetSamplePlan, alpha: f64) -> Result<ShapleyAttribution> {
    let m = plan.m2;
    let by_subset: BTreeMap<&Subset, &SubsetValue> = values.iter().map(|v| (&v.subset, v)).collect();
    let lookup = |s: &Subset| -> Result<&SubsetValue> {
        by_subset
            .get(s)
            .copied()
            .ok_or_else(|| Error::Internal(format!("no value supplied for subset {s}")))
    };
    let empty = lookup(&Subset::empty())?;
    let full = lookup(&Subset::full(m))?;
    let n_rows = empty.influence.len();
    let mut warnings = Vec::new();

    if m == 1 {
        let c = full.value.point - empty.value.point;
        let psi: Vec<f64> = full.influence.iter().zip(&empty.influence).map(|(a, b)| a - b).collect();
        let se = influence_se(&psi);
        return Ok(ShapleyAttribution {
            phi: vec![
                empty.value.clone(),
                EstimateWithCI::from_se(c, se, alpha, n_rows),
            ],
            n_unique_subsets: plan.unique.len(),
            n_draws: plan.n_draws,
            exhaustive: true,
            efficiency_residual: 0.0,
            se_without_sampling: vec![empty.value.se, se],
            warnings,
        });
    }

    let exhaustive = plan.is_exhaustive();
    let mut middle: Vec<&Subset> = Vec::new();
    let mut weights = Vec::new();
    let mut counts = Vec::new();
    for (s, &count) in plan.unique.iter().zip(&plan.counts) {
        if s.is_empty() || s.is_full(m) {
            continue;
        }
        middle.push(s);
        counts.push(count);
        weights.push(if exhaustive { kernel_weight(m, s.len()) } else { count as f64 });
    }
    if plan.unique.len() < m + 1 {
        return Err(Error::Degenerate(format!(
            "only {} unique subsets for {m} variables; increase gamma so at least {} are drawn",
            plan.unique.len(),
            m + 1
        )));
    }
    let system = ReducedSystem::new(&middle, weights, m)?;
    if system.pseudo {
        warnings.push("Shapley design is near-singular; used a pseudo-inverse".to_string());
    }

    let mid_values: Vec<f64> = middle.iter().map(|s| lookup(s).map(|v| v.value.point)).collect::<Result<_>>()?;
    let (phi, _beta, resid) = system.solve(empty.value.point, full.value.point, &mid_values, m);

    // Linear map from (v(∅), v(full), middle values) to phi, column by column.
    let n_in = middle.len() + 2;
    let mut map = DMatrix::zeros(m, n_in);
    for col in 0..n_in {
        let mut unit = vec![0.0; middle.len()];
        let (v0, vf) = match col {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            c => {
                unit[c - 2] = 1.0;
                (0.0, 0.0)
            }
        };
        let (p, _, _) = system.solve(v0, vf, &unit, m);
        map.set_column(col, &p);
    }
    let inputs: Vec<&SubsetValue> = std::iter::once(empty)
        .chain(std::iter::once(full))
        .chain(middle.iter().map(|s| lookup(s).expect("checked above")))
        .collect();
    if inputs.iter().any(|v| v.influence.len() != n_rows) {
        return Err(Error::Internal("subset influence vectors differ in length".into()));
    }

    // Sampling covariance of beta from per-draw estimating equations.
    let p = m - 1;
    let mut sampling_var = vec![0.0; m];
    if !exhaustive && plan.n_draws > 0 {
        let nd = plan.n_draws as f64;
        let a_inv = &system.gram_inv * nd;
        let mut mean = DVector::zeros(p);
        let mut second = DMatrix::zeros(p, p);
        for (r, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            // Leverage-corrected residual (HC3): in-sample residuals are
            // too small when few draws support the fit.
            let x_r = system.x.row(r).transpose();
            let leverage = (x_r.transpose() * &system.gram_inv * &x_r)[0];
            let e = resid[r] / (1.0 - leverage).max(HC3_FLOOR);
            let eta = &a_inv * (x_r * e);
            mean += &eta * count as f64;
            second += &eta * eta.transpose() * count as f64;
        }
        mean /= nd;
        let cov_beta = (second / nd - &mean * mean.transpose()) / nd;
        for j in 0..p {
            sampling_var[j] = cov_beta[(j, j)].max(0.0);
        }
        sampling_var[m - 1] = cov_beta.sum().max(0.0);
    }

    let z = z_crit(alpha);
    let mut out = vec![empty.value.clone()];
    let mut se_plain = vec![empty.value.se];
    for j in 0..m {
        let psi: Vec<f64> = (0..n_rows)
            .map(|i| (0..n_in).map(|c| map[(j, c)] * inputs[c].influence[i]).sum())
            .collect();
        let se_v = influence_se(&psi);
        let se = (se_v * se_v + sampling_var[j]).sqrt();
        let mut e = EstimateWithCI::from_se(phi[j], se, alpha, n_rows);
        e.ci_lo = phi[j] - z * se;
        e.ci_hi = phi[j] + z * se;
        out.push(e);
        se_plain.push(se_v);
    }
    let efficiency_residual = (phi.sum() - (full.value.point - empty.value.point)).abs();
    if efficiency_residual > EFFICIENCY_TOLERANCE {
        warnings.push(format!("efficiency constraint residual {efficiency_residual:.3e}"));
    }
    Ok(ShapleyAttribution {
        phi: out,
        n_unique_subsets: plan.unique.len(),
        n_draws: plan.n_draws,
        exhaustive,
        efficiency_residual,
        se_without_sampling: se_plain,
        warnings,
    })
}

/// Exact Shapley values `phi_1..phi_m` of a set function given on all
/// subsets (as a bitmask-indexed table), by averaging marginal
/// contributions.
pub fn exact_shapley(m: usize, value: impl Fn(&Subset) -> f64) -> Vec<f64> {
    let mut table = vec![0.0; 1 << m];
    for (mask, slot) in table.iter_mut().enumerate() {
        *slot = value(&Subset::new((0..m).filter(|j| mask >> j & 1 == 1).collect()));
    }
    let mut phi = vec![0.0; m];
    for (j, pj) in phi.iter_mut().enumerate() {
        for mask in 0..(1usize << m) {
            if mask >> j & 1 == 1 {
                continue;
            }
            let k = mask.count_ones() as usize;
            let w = 1.0 / (m as f64 * binomial(m - 1, k));
            *pj += w * (table[mask | 1 << j] - table[mask]);
        }
    }
    phi
}
