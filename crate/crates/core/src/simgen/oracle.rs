//! Monte Carlo ground truth for the generators.
//!
//! Conditional means of the loss are available in closed form per point
//! (`Σ_y ℓ(x,y) p_d(y|x)`), so only the feature distribution is simulated.
//! Squared differences of inner Monte Carlo averages are made unbiased by
//! splitting the inner draws into two independent halves and multiplying
//! the half-sample differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DgpSpec;
use crate::dataset::{SOURCE, TARGET};
use crate::learners::bin_risk_one;
use crate::loss::PredictionRule;
use crate::nuisance::expected_loss;
use crate::subset::{derive_seed, Subset};

/// Number of independently seeded work units; fixed so results do not
/// depend on the thread count.
const CHUNKS: usize = 64;

/// Runs `f(count, rng)` on `CHUNKS` seeded pieces of `total` draws.
fn chunked<A, F>(total: usize, seed: u64, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> A + Sync,
{
    (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let count = total / CHUNKS + usize::from(c < total % CHUNKS);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
            f(count, &mut rng)
        })
        .collect()
}

fn loss_mean(spec: &DgpSpec, rule: &PredictionRule, domain: u8, x: &[f64]) -> f64 {
    expected_loss(rule, &x[..1], &x[1..], spec.p_y(domain, x))
}

/// True aggregate decomposition terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateTruth {
    pub lambda_w: f64,
    pub lambda_z: f64,
    pub lambda_y: f64,
    pub total: f64,
}

impl AggregateTruth {
    pub fn terms(&self) -> [(&'static str, f64); 4] {
        [
            ("lambda_w", self.lambda_w),
            ("lambda_z", self.lambda_z),
            ("lambda_y", self.lambda_y),
            ("total", self.total),
        ]
    }
}

/// Aggregate truth from `draws` feature draws per domain.
pub fn aggregate_truth(spec: &DgpSpec, rule: &PredictionRule, draws: usize, seed: u64) -> AggregateTruth {
    let width = spec.m2() + 1;
    // [E_0 μ_0, E_1 μ_00(W), E_1 μ_0, E_1 μ_1]
    let parts = chunked(draws, seed, |count, rng| {
        let mut acc = [0.0; 4];
        let mut x = vec![0.0; width];
        let mut h = vec![0.0; width];
        for _ in 0..count {
            spec.sample_x(SOURCE, rng, &mut x);
            acc[0] += loss_mean(spec, rule, SOURCE, &x);
            spec.sample_x(TARGET, rng, &mut x);
            h.copy_from_slice(&x);
            spec.resample_rest(SOURCE, &mut h, &Subset::empty(), rng);
            acc[1] += loss_mean(spec, rule, SOURCE, &h);
            acc[2] += loss_mean(spec, rule, SOURCE, &x);
            acc[3] += loss_mean(spec, rule, TARGET, &x);
        }
        acc
    });
    let mut m = [0.0; 4];
    for p in parts {
        for k in 0..4 {
            m[k] += p[k];
        }
    }
    let m = m.map(|v| v / draws as f64);
    AggregateTruth {
        lambda_w: m[1] - m[0],
        lambda_z: m[2] - m[1],
        lambda_y: m[3] - m[2],
        total: m[3] - m[0],
    }
}

/// True value of one subset with its ratio pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTruth {
    pub subset: Subset,
    pub num: f64,
    pub den: f64,
    pub value: f64,
}

fn finish(subsets: &[Subset], sums: Vec<f64>, outer: usize) -> Vec<ValueTruth> {
    let den = sums[subsets.len()] / outer as f64;
    subsets
        .iter()
        .zip(&sums)
        .map(|(s, &v)| {
            let num = v / outer as f64;
            ValueTruth {
                subset: s.clone(),
                num,
                den,
                value: 1.0 - num / den,
            }
        })
        .collect()
}

fn add_into(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut sums = vec![0.0; len];
    for p in parts {
        for (a, b) in sums.iter_mut().zip(p) {
            *a += b;
        }
    }
    sums
}

/// Values of partial conditional covariate shifts.
///
/// For each of `outer` target draws of `W`, `inner` pairs of draws give
/// `μ_s0(W)` (draw `Z` from the target given `W`, then redraw `Z_{-s}`
/// from the source given `(W, Z_s)`) and `μ_10(W)` (`Z` from the target).
pub fn covariate_value_truth(
    spec: &DgpSpec,
    rule: &PredictionRule,
    subsets: &[Subset],
    outer: usize,
    inner: usize,
    seed: u64,
) -> Vec<ValueTruth> {
    let width = spec.m2() + 1;
    let half = (inner / 2).max(1);
    // Denominator uses s = ∅ (Z redrawn entirely from the source).
    let mut all: Vec<Subset> = subsets.to_vec();
    all.push(Subset::empty());
    let parts = chunked(outer, seed, |count, rng| {
        let mut acc = vec![0.0; all.len()];
        let mut x = vec![0.0; width];
        let mut t = vec![0.0; width];
        let mut h = vec![0.0; width];
        for _ in 0..count {
            spec.sample_x(TARGET, rng, &mut x);
            for (k, s) in all.iter().enumerate() {
                let mut d = [0.0; 2];
                for dk in d.iter_mut() {
                    for _ in 0..half {
                        t.copy_from_slice(&x);
                        spec.resample_rest(TARGET, &mut t, &Subset::empty(), rng);
                        h.copy_from_slice(&t);
                        spec.resample_rest(SOURCE, &mut h, s, rng);
                        *dk += loss_mean(spec, rule, SOURCE, &h) - loss_mean(spec, rule, SOURCE, &t);
                    }
                    *dk /= half as f64;
                }
                acc[k] += d[0] * d[1];
            }
        }
        acc
    });
    finish(subsets, add_into(parts, all.len()), outer)
}

/// Values of partial conditional outcome shifts with risk binned into
/// `bins` bins of the true source risk.
///
/// For each of `outer` target draws `x`, hybrid points replace `Z_{-s}` by
/// target draws given `(W, Z_s)` and are accepted when their binned source
/// risk equals that of `x` (rejection sampling from the conditional given
/// the bin). `accepted` hybrids per point estimate the shifted outcome
/// probability; at most `50 * accepted` proposals are made.
pub fn outcome_value_truth(
    spec: &DgpSpec,
    rule: &PredictionRule,
    subsets: &[Subset],
    bins: usize,
    outer: usize,
    accepted: usize,
    seed: u64,
) -> Vec<ValueTruth> {
    let width = spec.m2() + 1;
    let m2 = spec.m2();
    let half = (accepted / 2).max(1);
    let parts = chunked(outer, seed, |count, rng| {
        let mut acc = vec![0.0; subsets.len() + 1];
        let mut x = vec![0.0; width];
        let mut h = vec![0.0; width];
        for _ in 0..count {
            spec.sample_x(TARGET, rng, &mut x);
            let p1 = spec.p_y(TARGET, &x);
            let q = bin_risk_one(spec.p_y(SOURCE, &x), bins);
            let label = rule.predict(&x[..1], &x[1..]);
            // μ_1 - μ_s = (1 - 2·label)(p_1 - p_s) for the 0-1 loss.
            let sign2 = (1.0 - 2.0 * label).powi(2);
            let p0 = spec.p_y(SOURCE, &x);
            acc[subsets.len()] += sign2 * (p1 - p0).powi(2);
            for (k, s) in subsets.iter().enumerate() {
                if s.is_full(m2) {
                    continue;
                }
                let mut means = [0.0; 2];
                for mk in means.iter_mut() {
                    let (mut got, mut tries, mut sum) = (0, 0, 0.0);
                    while got < half && tries < 50 * half {
                        tries += 1;
                        h.copy_from_slice(&x);
                        spec.resample_rest(TARGET, &mut h, s, rng);
                        if bin_risk_one(spec.p_y(SOURCE, &h), bins) == q {
                            sum += spec.p_y(TARGET, &h);
                            got += 1;
                        }
                    }
                    // `x` itself always lies in its bin; fall back to it if
                    // the bin is too thin to hit.
                    *mk = if got > 0 { sum / got as f64 } else { p1 };
                }
                acc[k] += sign2 * (p1 - means[0]) * (p1 - means[1]);
            }
        }
        acc
    });
    finish(subsets, add_into(parts, subsets.len() + 1), outer)
}
