//! Ridge-penalized GLMs on standardized polynomial features.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Expanded feature width above which a polynomial candidate is refused.
pub const MAX_EXPANDED_WIDTH: usize = 400;

/// All monomials of total degree `1..=degree` over standardized inputs,
/// themselves standardized with training-sample moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyExpansion {
    in_mean: Vec<f64>,
    in_scale: Vec<f64>,
    monomials: Vec<Vec<usize>>,
    out_mean: Vec<f64>,
    out_scale: Vec<f64>,
}

pub fn monomial_count(inputs: usize, degree: usize) -> usize {
    // C(inputs + degree, degree) - 1
    let mut c: u128 = 1;
    for k in 1..=degree as u128 {
        c = c * (inputs as u128 + k) / k;
    }
    (c - 1).min(usize::MAX as u128) as usize
}

fn monomials(inputs: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack: Vec<Vec<usize>> = (0..inputs).map(|j| vec![j]).collect();
    // breadth by degree, non-decreasing index lists
    for d in 1..=degree {
        let mut next = Vec::new();
        for m in &stack {
            out.push(m.clone());
            if d < degree {
                let last = *m.last().unwrap();
                for j in last..inputs {
                    let mut e = m.clone();
                    e.push(j);
                    next.push(e);
                }
            }
        }
        stack = next;
    }
    out
}

impl PolyExpansion {
    pub fn fit(x: &Matrix, degree: usize) -> Result<Self> {
        let p = x.cols();
        let width = monomial_count(p, degree);
        if width > MAX_EXPANDED_WIDTH {
            return Err(Error::Learner(format!(
                "degree-{degree} expansion of {p} inputs has {width} columns (limit {MAX_EXPANDED_WIDTH})"
            )));
        }
        let n = x.rows() as f64;
        let mut in_mean = vec![0.0; p];
        let mut in_scale = vec![0.0; p];
        for i in 0..x.rows() {
            for (j, v) in x.row(i).iter().enumerate() {
                in_mean[j] += v / n;
            }
        }
        for i in 0..x.rows() {
            for (j, v) in x.row(i).iter().enumerate() {
                in_scale[j] += (v - in_mean[j]).powi(2) / n;
            }
        }
        for s in &mut in_scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let mut exp = PolyExpansion {
            in_mean,
            in_scale,
            monomials: monomials(p, degree),
            out_mean: vec![0.0; width],
            out_scale: vec![1.0; width],
        };
        let raw = exp.expand_raw(x);
        let mut out_mean = vec![0.0; width];
        let mut out_scale = vec![0.0; width];
        for i in 0..raw.rows() {
            for (j, v) in raw.row(i).iter().enumerate() {
                out_mean[j] += v / n;
            }
        }
        for i in 0..raw.rows() {
            for (j, v) in raw.row(i).iter().enumerate() {
                out_scale[j] += (v - out_mean[j]).powi(2) / n;
            }
        }
        for s in &mut out_scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        exp.out_mean = out_mean;
        exp.out_scale = out_scale;
        Ok(exp)
    }

    pub fn width(&self) -> usize {
        self.monomials.len()
    }

    fn expand_raw(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.width());
        let mut std_row = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (j, v) in x.row(i).iter().enumerate() {
                std_row[j] = (v - self.in_mean[j]) / self.in_scale[j];
            }
            let dst = out.row_mut(i);
            for (k, m) in self.monomials.iter().enumerate() {
                dst[k] = m.iter().map(|&j| std_row[j]).product();
            }
        }
        out
    }

    pub fn expand_row_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (k, m) in self.monomials.iter().enumerate() {
            let raw: f64 = m
                .iter()
                .map(|&j| (x[j] - self.in_mean[j]) / self.in_scale[j])
                .product();
            out.push((raw - self.out_mean[k]) / self.out_scale[k]);
        }
    }

    pub fn expand(&self, x: &Matrix) -> Matrix {
        let mut m = self.expand_raw(x);
        for i in 0..m.rows() {
            for (k, v) in m.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.out_mean[k]) / self.out_scale[k];
            }
        }
        m
    }
}

/// Fitted linear predictor on expanded features; `logistic` selects the
/// inverse-logit link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub expansion: PolyExpansion,
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub logistic: bool,
}

impl PolyModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.coef.len());
        self.expansion.expand_row_into(x, &mut buf);
        let eta = self.intercept + buf.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>();
        if self.logistic {
            sigmoid(eta)
        } else {
            eta
        }
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Accumulates `[1 x]^T diag(wt) [1 x]` (intercept first) and `[1 x]^T r`.
fn weighted_normal_equations(x: &Matrix, wt: &[f64], r: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let k = x.cols() + 1;
    let mut h = vec![0.0; k * k];
    let mut g = vec![0.0; k];
    let mut row = vec![0.0; k];
    for i in 0..x.rows() {
        row[0] = 1.0;
        row[1..].copy_from_slice(x.row(i));
        let wi = wt[i];
        let ri = r[i];
        for a in 0..k {
            let va = row[a];
            g[a] += va * ri;
            let wa = wi * va;
            if wa == 0.0 {
                continue;
            }
            let base = a * k;
            for b in a..k {
                h[base + b] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[a * k + b] = h[b * k + a];
        }
    }
    (DMatrix::from_row_slice(k, k, &h), DVector::from_vec(g))
}

fn solve_spd(mut h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let k = h.nrows();
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(g));
    }
    let jitter = 1e-8 * (0..k).map(|i| h[(i, i)].abs()).fold(1.0, f64::max);
    for i in 0..k {
        h[(i, i)] += jitter;
    }
    h.cholesky().map(|ch| ch.solve(g))
}

/// Penalized logistic regression by damped Newton iterations.
///
/// Minimizes `sum_i logloss_i + lambda/2 * |beta|^2` (intercept unpenalized).
/// Targets may be fractional in `[0,1]`.
pub fn fit_logistic(x: &Matrix, y: &[f64], degree: usize, lambda: f64) -> Result<PolyModel> {
    let expansion = PolyExpansion::fit(x, degree)?;
    let xe = expansion.expand(x);
    let n = xe.rows();
    let k = xe.cols() + 1;
    let ybar = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = DVector::zeros(k);
    beta[0] = (ybar / (1.0 - ybar)).ln();

    let eta_of = |beta: &DVector<f64>| -> Vec<f64> {
        (0..n)
            .map(|i| {
                beta[0]
                    + xe.row(i)
                        .iter()
                        .zip(beta.iter().skip(1))
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    };
    let objective = |beta: &DVector<f64>, eta: &[f64]| -> f64 {
        let nll: f64 = eta.iter().zip(y).map(|(&e, &yi)| softplus(e) - yi * e).sum();
        nll + 0.5 * lambda * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
    };

    let mut eta = eta_of(&beta);
    let mut obj = objective(&beta, &eta);
    for _ in 0..100 {
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let wt: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - pi)).max(1e-10)).collect();
        let resid: Vec<f64> = p.iter().zip(y).map(|(pi, yi)| pi - yi).collect();
        let (mut h, mut g) = weighted_normal_equations(&xe, &wt, &resid);
        for a in 1..k {
            h[(a, a)] += lambda;
            g[a] += lambda * beta[a];
        }
        let step = solve_spd(h, &g)
            .ok_or_else(|| Error::Learner("logistic Hessian is not positive definite".into()))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta - &step * t;
            let cand_eta = eta_of(&cand);
            let cand_obj = objective(&cand, &cand_eta);
            if cand_obj.is_finite() && cand_obj <= obj + 1e-12 * obj.abs() {
                let improvement = obj - cand_obj;
                beta = cand;
                eta = cand_eta;
                obj = cand_obj;
                accepted = true;
                if improvement <= 1e-10 * (1.0 + obj.abs()) {
                    return finish(expansion, beta, true);
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    finish(expansion, beta, true)
}

fn finish(expansion: PolyExpansion, beta: DVector<f64>, logistic: bool) -> Result<PolyModel> {
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Learner("non-finite coefficients".into()));
    }
    Ok(PolyModel {
        expansion,
        intercept: beta[0],
        coef: beta.iter().skip(1).copied().collect(),
        logistic,
    })
}

/// Ridge least squares on polynomial features (intercept unpenalized).
pub fn fit_ridge(x: &Matrix, y: &[f64], degree: usize, lambda: f64) -> Result<PolyModel> {
    let expansion = PolyExpansion::fit(x, degree)?;
    let xe = expansion.expand(x);
    let k = xe.cols() + 1;
    let ones = vec![1.0; xe.rows()];
    let (mut h, g) = weighted_normal_equations(&xe, &ones, y);
    for a in 1..k {
        h[(a, a)] += lambda;
    }
    let beta =
        solve_spd(h, &g).ok_or_else(|| Error::Learner("ridge system is singular".into()))?;
    finish(expansion, beta, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_enumeration_matches_count() {
        for p in 1..5 {
            for d in 1..4 {
                assert_eq!(monomials(p, d).len(), monomial_count(p, d));
            }
        }
        assert_eq!(monomial_count(4, 3), 34);
    }

    #[test]
    fn ridge_recovers_linear_function() {
        let n = 200;
        let x = Matrix::from_row_major(n, 2, (0..2 * n).map(|i| ((i * 37) % 101) as f64 / 50.0).collect());
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * x.get(i, 0) - 0.5 * x.get(i, 1)).collect();
        let m = fit_ridge(&x, &y, 1, 1e-9).unwrap();
        for i in 0..n {
            assert!((m.predict_row(x.row(i)) - y[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn logistic_matches_fractional_targets() {
        // Targets equal to a logistic curve are reproduced almost exactly.
        let n = 300;
        let x = Matrix::from_row_major(n, 1, (0..n).map(|i| -3.0 + 6.0 * i as f64 / n as f64).collect());
        let y: Vec<f64> = (0..n).map(|i| sigmoid(0.5 - 1.5 * x.get(i, 0))).collect();
        let m = fit_logistic(&x, &y, 1, 1e-8).unwrap();
        for i in 0..n {
            assert!((m.predict_row(x.row(i)) - y[i]).abs() < 1e-4);
        }
    }
}
