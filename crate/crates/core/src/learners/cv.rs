use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{FittedModel, LearnerSpec, Task};
use crate::matrix::Matrix;

pub const DEFAULT_FOLDS: usize = 3;

/// Result of cross-validated selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFit {
    pub model: FittedModel,
    /// Selected candidate; `None` when the target was constant.
    pub selected: Option<LearnerSpec>,
    /// Mean held-out score of the selected candidate (log-loss or MSE).
    pub cv_score: f64,
    /// True when the target was constant and a constant predictor returned.
    pub constant_target: bool,
}

impl CvFit {
    pub fn describe(&self) -> String {
        match &self.selected {
            Some(spec) => spec.to_string(),
            None => "constant".to_string(),
        }
    }
}

const LOGLOSS_EPS: f64 = 1e-12;

fn score(task: Task, pred: &[f64], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    match task {
        Task::Classification => {
            pred.iter()
                .zip(y)
                .map(|(&p, &t)| {
                    let p = p.clamp(LOGLOSS_EPS, 1.0 - LOGLOSS_EPS);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n
        }
        Task::Regression => pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n,
    }
}

/// Selects among `candidates` by `folds`-fold cross-validation (log-loss
/// for classification, squared error for regression; ties favour the
/// earlier candidate) and refits the winner on all rows.
///
/// A constant target yields a constant predictor with `constant_target`
/// set. Candidates that fail to fit on any fold are skipped; if none
/// succeeds the call fails.
pub fn fit_cv(
    candidates: &[LearnerSpec],
    x: &Matrix,
    y: &[f64],
    task: Task,
    folds: usize,
    seed: u64,
) -> Result<CvFit> {
    let n = y.len();
    if x.rows() != n {
        return Err(Error::Data(format!("{} feature rows but {n} targets", x.rows())));
    }
    if n == 0 {
        return Err(Error::Data("cannot fit a learner on zero rows".into()));
    }
    if task == Task::Classification && y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Data("classification targets must lie in [0,1]".into()));
    }
    let first = y[0];
    if y.iter().all(|&v| v == first) {
        return Ok(CvFit {
            model: FittedModel::Constant { value: first },
            selected: None,
            cv_score: 0.0,
            constant_target: true,
        });
    }
    let usable: Vec<&LearnerSpec> = candidates.iter().filter(|c| c.supports(task, y)).collect();
    if usable.is_empty() {
        return Err(Error::Config(format!("no learner candidate applies to {task:?}")));
    }
    if usable.len() == 1 {
        let model = usable[0].fit(x, y, task)?;
        let cv_score = score(task, &model.predict(x), y);
        return Ok(CvFit {
            model,
            selected: Some(usable[0].clone()),
            cv_score,
            constant_target: false,
        });
    }
    if n < folds || folds < 2 {
        return Err(Error::Data(format!("{n} rows cannot be split into {folds} folds")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; n];
    for (k, &i) in order.iter().enumerate() {
        fold_of[i] = k % folds;
    }
    let fold_sets: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| (0..n).partition(|&i| fold_of[i] != f))
        .collect();

    let mut best: Option<(f64, &LearnerSpec)> = None;
    let mut last_err = None;
    'candidates: for &spec in &usable {
        let mut total = 0.0;
        for (train, test) in &fold_sets {
            let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            let xtr = x.select_rows(train);
            let model = if ytr.iter().all(|&v| v == ytr[0]) {
                FittedModel::Constant { value: ytr[0] }
            } else {
                match spec.fit(&xtr, &ytr, task) {
                    Ok(m) => m,
                    Err(e) => {
                        last_err = Some(e);
                        continue 'candidates;
                    }
                }
            };
            total += score(task, &model.predict(&x.select_rows(test)), &yte) * test.len() as f64;
        }
        let mean = total / n as f64;
        if mean.is_finite() && best.is_none_or(|(b, _)| mean < b) {
            best = Some((mean, spec));
        }
    }
    let (cv_score, spec) = best.ok_or_else(|| {
        Error::Learner(format!(
            "no candidate could be fitted: {}",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        ))
    })?;
    Ok(CvFit {
        model: spec.fit(x, y, task)?,
        selected: Some(spec.clone()),
        cv_score,
        constant_target: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::sigmoid;
    use rand::Rng;

    fn logistic_data(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Matrix::from_row_major(n, 2, x);
        let y = (0..n)
            .map(|i| {
                let p = sigmoid(1.5 * x.get(i, 0) - x.get(i, 1));
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        (x, y)
    }

    #[test]
    fn constant_target_is_flagged() {
        let x = Matrix::from_row_major(4, 1, vec![0.0, 1.0, 2.0, 3.0]);
        let fit = fit_cv(
            &crate::learners::compact_grid(),
            &x,
            &[1.0; 4],
            Task::Classification,
            3,
            0,
        )
        .unwrap();
        assert!(fit.constant_target);
        assert_eq!(fit.model.predict_row(&[7.0]), 1.0);
    }

    #[test]
    fn selection_is_deterministic_and_prefers_linear_on_linear_data() {
        let (x, y) = logistic_data(600, 3);
        let grid = vec![
            LearnerSpec::LogisticPoly { degree: 1, lambda: 0.1 },
            LearnerSpec::Gbt {
                trees: 20,
                depth: 1,
                learning_rate: 0.1,
            },
        ];
        let a = fit_cv(&grid, &x, &y, Task::Classification, 3, 9).unwrap();
        let b = fit_cv(&grid, &x, &y, Task::Classification, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.selected, Some(grid[0].clone()));
    }

    #[test]
    fn ties_go_to_the_first_candidate() {
        let (x, y) = logistic_data(90, 1);
        let spec = LearnerSpec::LogisticPoly { degree: 1, lambda: 0.1 };
        let other = LearnerSpec::LogisticPoly { degree: 1, lambda: 0.1 };
        let fit = fit_cv(&[spec.clone(), other], &x, &y, Task::Classification, 3, 0).unwrap();
        assert_eq!(fit.selected, Some(spec));
    }
}
