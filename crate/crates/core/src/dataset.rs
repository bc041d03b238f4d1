//! Two-domain samples, per-row losses and train/evaluation splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::subset::{derive_seed, Subset};

pub const SOURCE: u8 = 0;
pub const TARGET: u8 = 1;

/// Column-partitioned sample from the source (`domain == 0`) and target
/// (`domain == 1`) environments.
///
/// `w` holds the baseline variables, `z` the conditional covariates, `loss`
/// the per-row loss of the fixed prediction model being explained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    w: Matrix,
    z: Matrix,
    y: Vec<f64>,
    domain: Vec<u8>,
    loss: Vec<f64>,
    w_names: Vec<String>,
    z_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        w: Matrix,
        z: Matrix,
        y: Vec<f64>,
        domain: Vec<u8>,
        loss: Vec<f64>,
        w_names: Vec<String>,
        z_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if w.rows() != n || z.rows() != n || domain.len() != n || loss.len() != n {
            return Err(Error::data(format!(
                "column lengths differ: w={}, z={}, y={}, domain={}, loss={}",
                w.rows(),
                z.rows(),
                n,
                domain.len(),
                loss.len()
            )));
        }
        if z.cols() == 0 {
            return Err(Error::data("at least one conditional covariate (z) is required"));
        }
        if w_names.len() != w.cols() || z_names.len() != z.cols() {
            return Err(Error::data("column name count does not match matrix width"));
        }
        if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::data(format!("outcome must be binary, row {i} has {}", y[i])));
        }
        if let Some(i) = domain.iter().position(|&d| d > 1) {
            return Err(Error::data(format!("domain flag must be 0 or 1, row {i} has {}", domain[i])));
        }
        if let Some(i) = loss.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("loss is not finite at row {i}")));
        }
        if !w.is_finite() || !z.is_finite() {
            return Err(Error::data("features contain missing or non-finite values"));
        }
        for d in [SOURCE, TARGET] {
            if !domain.contains(&d) {
                return Err(Error::data(format!("domain {d} has no rows")));
            }
        }
        Ok(Dataset {
            w,
            z,
            y,
            domain,
            loss,
            w_names,
            z_names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of baseline variables.
    pub fn m1(&self) -> usize {
        self.w.cols()
    }

    /// Number of conditional covariates.
    pub fn m2(&self) -> usize {
        self.z.cols()
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn domain(&self) -> &[u8] {
        &self.domain
    }

    pub fn loss(&self) -> &[f64] {
        &self.loss
    }

    pub fn w_names(&self) -> &[String] {
        &self.w_names
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    pub fn count(&self, domain: u8) -> usize {
        self.domain.iter().filter(|&&d| d == domain).count()
    }

    /// True when every loss value is 0 or 1.
    pub fn has_zero_one_loss(&self) -> bool {
        self.loss.iter().all(|&l| l == 0.0 || l == 1.0)
    }

    /// Indices among `rows` that belong to `domain`, order preserved.
    pub fn rows_in(&self, rows: &[usize], domain: u8) -> Vec<usize> {
        rows.iter().copied().filter(|&i| self.domain[i] == domain).collect()
    }

    /// Feature block `[W | Z_cols]` for the given rows.
    pub fn design(&self, rows: &[usize], z_cols: &[usize]) -> Matrix {
        let m1 = self.m1();
        let cols = m1 + z_cols.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &i in rows {
            data.extend_from_slice(self.w.row(i));
            let z = self.z.row(i);
            data.extend(z_cols.iter().map(|&j| z[j]));
        }
        Matrix::from_row_major(rows.len(), cols, data)
    }

    /// `[W | Z]` for the given rows.
    pub fn design_full(&self, rows: &[usize]) -> Matrix {
        let all: Vec<usize> = (0..self.m2()).collect();
        self.design(rows, &all)
    }

    /// `[W | Z_s]` for the given rows.
    pub fn design_subset(&self, rows: &[usize], s: &Subset) -> Matrix {
        self.design(rows, s.indices())
    }

    pub fn loss_at(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.loss[i]).collect()
    }

    pub fn y_at(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.y[i]).collect()
    }

    /// Mean loss over the rows of one domain.
    pub fn mean_loss(&self, rows: &[usize], domain: u8) -> f64 {
        let (s, c) = rows
            .iter()
            .filter(|&&i| self.domain[i] == domain)
            .fold((0.0, 0usize), |(s, c), &i| (s + self.loss[i], c + 1));
        s / c as f64
    }

    /// Builds a dataset by stacking a source and a target sample.
    #[allow(clippy::too_many_arguments)]
    pub fn from_domains(
        w0: Matrix,
        z0: Matrix,
        y0: Vec<f64>,
        loss0: Vec<f64>,
        w1: Matrix,
        z1: Matrix,
        y1: Vec<f64>,
        loss1: Vec<f64>,
        w_names: Vec<String>,
        z_names: Vec<String>,
    ) -> Result<Self> {
        let mut domain = vec![SOURCE; y0.len()];
        domain.extend(std::iter::repeat_n(TARGET, y1.len()));
        let mut y = y0;
        y.extend(y1);
        let mut loss = loss0;
        loss.extend(loss1);
        Dataset::new(w0.vstack(&w1), z0.vstack(&z1), y, domain, loss, w_names, z_names)
    }
}

/// How raw model outputs are turned into a 0-1 loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Predictions are labels in {0,1}.
    ZeroOneFromLabel,
    /// Predictions are scores; label = 1 iff score >= threshold.
    ZeroOneFromScore { threshold: f64 },
}

/// Per-row 0-1 loss `1{predicted label != y}`.
pub fn compute_loss(predictions: &[f64], y: &[f64], mode: LossMode) -> Result<Vec<f64>> {
    if predictions.len() != y.len() {
        return Err(Error::data(format!(
            "predictions ({}) and outcomes ({}) differ in length",
            predictions.len(),
            y.len()
        )));
    }
    if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::data(format!("outcome must be binary, found {v}")));
    }
    let label = |p: f64| -> Result<f64> {
        match mode {
            LossMode::ZeroOneFromLabel => {
                if p == 0.0 || p == 1.0 {
                    Ok(p)
                } else {
                    Err(Error::data(format!("predicted label must be 0 or 1, found {p}")))
                }
            }
            LossMode::ZeroOneFromScore { threshold } => {
                if !(threshold > 0.0 && threshold < 1.0) {
                    return Err(Error::config(format!("threshold must lie in (0,1), got {threshold}")));
                }
                if !p.is_finite() {
                    return Err(Error::data("prediction score is not finite"));
                }
                Ok(if p >= threshold { 1.0 } else { 0.0 })
            }
        }
    };
    predictions
        .iter()
        .zip(y)
        .map(|(&p, &yi)| Ok(if label(p)? != yi { 1.0 } else { 0.0 }))
        .collect()
}

/// Disjoint training / evaluation row sets, stratified by domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub train_fraction: f64,
    pub seed: u64,
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// Stratified random split: each domain contributes `floor(fraction * n_d)`
/// rows to training (kept within `1..n_d-1` so both partitions see both
/// domains). Index lists are returned sorted.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for d in [SOURCE, TARGET] {
        let mut rows: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.domain[i] == d).collect();
        if rows.len() < 2 {
            return Err(Error::data(format!(
                "domain {d} needs at least 2 rows to split, has {}",
                rows.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, d as u64 + 1));
        rows.shuffle(&mut rng);
        let k = ((train_fraction * rows.len() as f64).floor() as usize).clamp(1, rows.len() - 1);
        train.extend_from_slice(&rows[..k]);
        eval.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    Ok(SplitPlan {
        train,
        eval,
        train_fraction,
        seed,
    })
}

/// K stratified folds for cross-fitting; plan `k` evaluates on fold `k` and
/// trains on the rest.
pub fn cross_fit_plans(dataset: &Dataset, folds: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    if folds < 2 {
        return Err(Error::config("cross-fitting needs at least 2 folds"));
    }
    let mut assignment = vec![0usize; dataset.n()];
    for d in [SOURCE, TARGET] {
        let mut rows: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.domain[i] == d).collect();
        if rows.len() < folds {
            return Err(Error::data(format!(
                "domain {d} has {} rows, fewer than {folds} folds",
                rows.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100 + d as u64));
        rows.shuffle(&mut rng);
        for (k, &i) in rows.iter().enumerate() {
            assignment[i] = k % folds;
        }
    }
    Ok((0..folds)
        .map(|k| {
            let (eval, train): (Vec<usize>, Vec<usize>) =
                (0..dataset.n()).partition(|&i| assignment[i] == k);
            SplitPlan {
                train,
                eval,
                train_fraction: 1.0 - 1.0 / folds as f64,
                seed,
            }
        })
        .collect())
}
