//! Ground truth computed independently of the library: deterministic
//! quadrature for the Gaussian generator and exact enumeration for small
//! binary generators.

#![allow(dead_code)]

use perfshift::dataset::Dataset;
use perfshift::loss::{zero_one, LinearRule, PredictionRule};
use perfshift::matrix::Matrix;
use perfshift::simgen::DgpSpec;
use perfshift::Subset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Trapezoid rule for `E[f(Z)]`, `Z ~ N(0,1)` truncated to `[lo, hi]`
/// (standardized units), unnormalized: returns `∫ f φ` over the interval.
fn normal_integral(lo: f64, hi: f64, nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    let lo = lo.max(-9.0);
    let hi = hi.min(9.0);
    if hi <= lo {
        return 0.0;
    }
    let h = (hi - lo) / nodes as f64;
    let mut acc = 0.0;
    for i in 0..=nodes {
        let z = lo + h * i as f64;
        let w = if i == 0 || i == nodes { 0.5 } else { 1.0 };
        acc += w * std_normal_pdf(z) * f(z);
    }
    acc * h
}

/// `E[f(X)]` for `X ~ N(mean, sd^2)`.
pub fn normal_expect(mean: f64, sd: f64, f: impl Fn(f64) -> f64) -> f64 {
    if sd == 0.0 {
        return f(mean);
    }
    normal_integral(-9.0, 9.0, 3600, |z| f(mean + sd * z))
}

/// Expected 0-1 loss of the source Bayes rule at a point whose source
/// logit is `t`: `min(σ(t), 1-σ(t))`.
fn bayes_loss(t: f64) -> f64 {
    sigmoid(-t.abs())
}

fn dot(a: &[f64], b: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&j| a[j] * b[j]).sum()
}

fn sq(a: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&j| a[j] * a[j]).sum()
}

/// Truths of the Gaussian generator with the source Bayes rule as the
/// explained model. Feature `0` is `W`; features are independent with unit
/// variance.
pub struct GaussianTruths {
    pub lambda_w: f64,
    pub lambda_z: f64,
    pub lambda_y: f64,
    /// `(subset, value)` for the covariate decomposition.
    pub v_z: Vec<(Subset, f64)>,
    pub v_z_den: f64,
    /// `(subset, value)` for the binned outcome decomposition.
    pub v_y: Vec<(Subset, f64)>,
    pub v_y_den: f64,
}

impl GaussianTruths {
    pub fn total(&self) -> f64 {
        self.lambda_w + self.lambda_z + self.lambda_y
    }
}

/// Mean of `E_0[ℓ | W=w]` where `Z` comes from domain means `mz` (per
/// feature index) and the Bayes loss depends on the source logit.
fn loss_given_w(c0: &[f64], w: f64, mz: &[f64], zs: &[usize]) -> f64 {
    normal_expect(c0[0] * w + dot(c0, mz, zs), sq(c0, zs).sqrt(), bayes_loss)
}

pub fn gaussian_truths(spec: &DgpSpec, subsets: &[Subset], bins: usize, outer: usize, seed: u64) -> GaussianTruths {
    let c0 = &spec.source.coef;
    let c1 = &spec.target.coef;
    let m0 = &spec.source.means;
    let m1 = &spec.target.means;
    let p = c0.len();
    let zs: Vec<usize> = (1..p).collect();

    // Source: E_0[ℓ] with W ~ N(m0_w, 1).
    let src_loss = normal_expect(m0[0], 1.0, |w| loss_given_w(c0, w, m0, &zs));
    // W from target, Z | W from source.
    let w_shift = normal_expect(m1[0], 1.0, |w| loss_given_w(c0, w, m0, &zs));
    // Target features, source outcome.
    let all: Vec<usize> = (0..p).collect();
    let tgt_mu0 = normal_expect(dot(c0, m1, &all), sq(c0, &all).sqrt(), bayes_loss);
    // Target features, target outcome: (a, b) = (source logit, target logit).
    let (ma, mb) = (dot(c0, m1, &all), dot(c1, m1, &all));
    let (va, vb, cab) = (sq(c0, &all), sq(c1, &all), all.iter().map(|&j| c0[j] * c1[j]).sum::<f64>());
    let beta = cab / va;
    let sres = (vb - cab * cab / va).max(0.0).sqrt();
    let tgt_loss = normal_expect(ma, va.sqrt(), |a| {
        let mean_b = mb + beta * (a - ma);
        normal_expect(mean_b, sres, |b| if a >= 0.0 { sigmoid(-b) } else { sigmoid(b) })
    });

    // Covariate values: Z_s from target, Z_{-s} from source, given W.
    let h = |s: &Subset, w: f64| {
        let mz: Vec<f64> = (0..p).map(|j| if j > 0 && s.contains(j - 1) { m1[j] } else { m0[j] }).collect();
        loss_given_w(c0, w, &mz, &zs)
    };
    let full = Subset::full(p - 1);
    let cov_num = |s: &Subset| normal_expect(m1[0], 1.0, |w| (h(s, w) - h(&full, w)).powi(2));
    let cov_den = cov_num(&Subset::empty());
    let v_z = subsets.iter().map(|s| (s.clone(), 1.0 - cov_num(s) / cov_den)).collect();

    let (v_y, v_y_den) = outcome_values(spec, subsets, bins, outer, seed);
    GaussianTruths {
        lambda_w: w_shift - src_loss,
        lambda_z: tgt_mu0 - w_shift,
        lambda_y: tgt_loss - tgt_mu0,
        v_z,
        v_z_den: cov_den,
        v_y,
        v_y_den,
    }
}

/// Binned outcome values by Monte Carlo over target points and quadrature
/// for the conditional mean of the target risk given `(W, Z_s, Q_bin)`.
fn outcome_values(spec: &DgpSpec, subsets: &[Subset], bins: usize, outer: usize, seed: u64) -> (Vec<(Subset, f64)>, f64) {
    let c0 = &spec.source.coef;
    let c1 = &spec.target.coef;
    let m1 = &spec.target.means;
    let p = c0.len();
    let b = bins as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..outer)
        .map(|_| (0..p).map(|j| m1[j] + rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let all: Vec<usize> = (0..p).collect();
    let mut den = 0.0;
    for x in &xs {
        let (p0, p1) = (sigmoid(dot(c0, x, &all)), sigmoid(dot(c1, x, &all)));
        den += (p1 - p0).powi(2);
    }
    den /= outer as f64;
    let values = subsets
        .iter()
        .map(|s| {
            let kept: Vec<usize> = (0..p).filter(|&j| j == 0 || s.contains(j - 1)).collect();
            let rest: Vec<usize> = (1..p).filter(|&j| !s.contains(j - 1)).collect();
            let (mu, mv) = (dot(c0, m1, &rest), dot(c1, m1, &rest));
            let (vu, vv) = (sq(c0, &rest), sq(c1, &rest));
            let cuv: f64 = rest.iter().map(|&j| c0[j] * c1[j]).sum();
            let mut num = 0.0;
            for x in &xs {
                let p1 = sigmoid(dot(c1, x, &all));
                if rest.is_empty() {
                    continue;
                }
                let su = vu.sqrt();
                let beta = cuv / vu;
                let sres = (vv - cuv * cuv / vu).max(0.0).sqrt();
                let k = ((sigmoid(dot(c0, x, &all)) * b + 0.5).floor()).min(b);
                let lo = if k <= 0.0 { f64::NEG_INFINITY } else { logit((k - 0.5) / b) };
                let hi = if k >= b { f64::INFINITY } else { logit((k + 0.5) / b) };
                let a0 = dot(c0, x, &kept);
                let a1 = dot(c1, x, &kept);
                // U = source logit of the rest, restricted so the bin matches.
                let ulo = (lo - a0 - mu) / su;
                let uhi = (hi - a0 - mu) / su;
                // The sigmoid is smooth, so a coarse inner rule suffices.
                let inner = |uz: f64| {
                    let mean = a1 + mv + beta * uz * su;
                    normal_integral(-8.0, 8.0, 80, |e| sigmoid(mean + sres * e))
                };
                let mass = normal_integral(ulo, uhi, 200, |_| 1.0);
                let pbar = normal_integral(ulo, uhi, 200, inner) / mass;
                num += (p1 - pbar).powi(2);
            }
            num /= outer as f64;
            (s.clone(), 1.0 - num / den)
        })
        .collect();
    (values, den)
}

/// Binary generator over `(W, Z_1, Z_2)` given by full joint tables.
///
/// Cells are indexed `w + 2 z_1 + 4 z_2`.
#[derive(Debug, Clone)]
pub struct DiscreteDgp {
    pub joint: [[f64; 8]; 2],
    pub p_y: [[f64; 8]; 2],
    pub rule: LinearRule,
}

pub fn cell_x(c: usize) -> [f64; 3] {
    [(c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64]
}

/// Exact values enumerated from the tables.
#[derive(Debug, Clone)]
pub struct DiscreteTruth {
    pub lambda_w: f64,
    pub lambda_z: f64,
    pub lambda_y: f64,
    /// Covariate numerators for `∅`, `{Z1}`, `{Z2}`.
    pub cov_num: [f64; 3],
    /// `E_1[(μ_1 - μ_0)^2]`.
    pub outcome_den: f64,
}

impl DiscreteDgp {
    /// A shift in every factor with all cells reasonably populated.
    pub fn standard() -> Self {
        let joint = |pw: f64, pz1: [f64; 2], pz2: [[f64; 2]; 2]| {
            let mut t = [0.0; 8];
            for (c, v) in t.iter_mut().enumerate() {
                let [w, z1, z2] = cell_x(c).map(|v| v as usize);
                let a = if w == 1 { pw } else { 1.0 - pw };
                let b = if z1 == 1 { pz1[w] } else { 1.0 - pz1[w] };
                let q = pz2[w][z1];
                let d = if z2 == 1 { q } else { 1.0 - q };
                *v = a * b * d;
            }
            t
        };
        let risk = |c: [f64; 4]| {
            let mut t = [0.0; 8];
            for (cell, v) in t.iter_mut().enumerate() {
                let x = cell_x(cell);
                *v = sigmoid(c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[2]);
            }
            t
        };
        DiscreteDgp {
            joint: [
                joint(0.4, [0.3, 0.6], [[0.2, 0.5], [0.4, 0.7]]),
                joint(0.6, [0.6, 0.8], [[0.5, 0.3], [0.6, 0.4]]),
            ],
            p_y: [risk([-1.0, 1.5, 1.0, -0.8]), risk([-0.5, 1.0, 0.2, 0.5])],
            rule: LinearRule {
                intercept: -0.5,
                w_coef: vec![1.0],
                z_coef: vec![1.0, -0.5],
            },
        }
    }

    fn predicted(&self, c: usize) -> f64 {
        let x = cell_x(c);
        if self.rule.score(&x[..1], &x[1..]) >= 0.0 {
            1.0
        } else {
            0.0
        }
    }

    /// `E_d[ℓ | X = cell]`.
    fn mu(&self, d: usize, c: usize) -> f64 {
        let pred = self.predicted(c);
        let p = self.p_y[d][c];
        p * zero_one(pred, 1.0) + (1.0 - p) * zero_one(pred, 0.0)
    }

    fn marginal(&self, d: usize, pred: impl Fn(usize) -> bool) -> f64 {
        (0..8).filter(|&c| pred(c)).map(|c| self.joint[d][c]).sum()
    }

    pub fn truth(&self) -> DiscreteTruth {
        let w_of = |c: usize| c & 1;
        let z1_of = |c: usize| (c >> 1) & 1;
        let pw = |d: usize, w: usize| self.marginal(d, |c| w_of(c) == w);
        // Source conditional mean loss given the coordinates selected by
        // `same` (cells agreeing with `c` on them).
        let cond0 = |c: usize, same: &dyn Fn(usize, usize) -> bool| {
            let mass = self.marginal(0, |k| same(k, c));
            (0..8).filter(|&k| same(k, c)).map(|k| self.joint[0][k] * self.mu(0, k)).sum::<f64>() / mass
        };
        let by_w = |k: usize, c: usize| w_of(k) == w_of(c);
        let mu00 = |c: usize| cond0(c, &by_w);

        let src_loss: f64 = (0..8).map(|c| self.joint[0][c] * self.mu(0, c)).sum();
        let tgt_loss: f64 = (0..8).map(|c| self.joint[1][c] * self.mu(1, c)).sum();
        let tgt_mu0: f64 = (0..8).map(|c| self.joint[1][c] * self.mu(0, c)).sum();
        let w_shift: f64 = [0usize, 1].iter().map(|&w| pw(1, w) * mu00(w)).sum();

        // μ_s0(w): Z_s from the target given w, Z_{-s} from the source given
        // (w, Z_s); μ_10(w) = E_1[μ_··0 | w].
        let mu_10 = |w: usize| {
            (0..8).filter(|&c| w_of(c) == w).map(|c| self.joint[1][c] * self.mu(0, c)).sum::<f64>() / pw(1, w)
        };
        let mu_s0 = |s: usize, w: usize| -> f64 {
            match s {
                0 => mu00(w),
                _ => {
                    let sel = |k: usize| if s == 1 { z1_of(k) } else { (k >> 2) & 1 };
                    (0..2)
                        .map(|v| {
                            let cells = |k: usize| w_of(k) == w && sel(k) == v;
                            let p1 = self.marginal(1, cells) / pw(1, w);
                            let rep = (0..8).find(|&k| cells(k)).unwrap();
                            let same = |k: usize, c: usize| w_of(k) == w_of(c) && sel(k) == sel(c);
                            p1 * cond0(rep, &same)
                        })
                        .sum()
                }
            }
        };
        let cov_num = [0usize, 1, 2].map(|s| (0..2).map(|w| pw(1, w) * (mu_s0(s, w) - mu_10(w)).powi(2)).sum());
        let outcome_den = (0..8).map(|c| self.joint[1][c] * (self.mu(1, c) - self.mu(0, c)).powi(2)).sum();
        DiscreteTruth {
            lambda_w: w_shift - src_loss,
            lambda_z: tgt_mu0 - w_shift,
            lambda_y: tgt_loss - tgt_mu0,
            cov_num,
            outcome_den,
        }
    }

    pub fn prediction_rule(&self) -> PredictionRule {
        PredictionRule::Linear(self.rule.clone())
    }

    /// `n` rows per domain.
    pub fn generate(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Vec::new();
        let mut z = Vec::new();
        let mut y = Vec::new();
        let mut loss = Vec::new();
        let mut domain = Vec::new();
        for d in 0..2 {
            for _ in 0..n {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut cell = 7;
                for c in 0..8 {
                    acc += self.joint[d][c];
                    if u < acc {
                        cell = c;
                        break;
                    }
                }
                let x = cell_x(cell);
                let yy = if rng.random::<f64>() < self.p_y[d][cell] { 1.0 } else { 0.0 };
                w.push(x[0]);
                z.extend_from_slice(&x[1..]);
                y.push(yy);
                loss.push(zero_one(self.predicted(cell), yy));
                domain.push(d as u8);
            }
        }
        let rows = 2 * n;
        Dataset::new(
            Matrix::from_row_major(rows, 1, w),
            Matrix::from_row_major(rows, 2, z),
            y,
            domain,
            loss,
            vec!["W".into()],
            vec!["Z1".into(), "Z2".into()],
        )
        .expect("valid discrete sample")
    }
}
