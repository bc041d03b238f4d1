//! Synthetic two-domain data generators with known ground truth.
//!
//! Three families are provided:
//!
//! * `gaussian_logistic`: independent unit-variance Gaussian features whose
//!   means differ across domains, logistic outcome with domain-specific
//!   coefficients.
//! * `uniform_logistic`: independent `U[-1, 1)` features, identical in both
//!   domains; only the logistic outcome coefficients change.
//! * `covariate_mixture`: `W, Z_1` Gaussian, `Z_2 | Z_1` a two-component
//!   Gaussian mixture centred on `Z_1`; only the mean of `Z_1` shifts and the
//!   outcome model is shared.
//!
//! Every family has one baseline variable `W`; the loss is the 0-1 loss of a
//! fixed linear prediction rule, by default the Bayes classifier of the
//! source domain.

pub mod coverage;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SOURCE};
use crate::error::{Error, Result};
use crate::learners::sigmoid;
use crate::loss::{LinearRule, PredictionRule};
use crate::matrix::Matrix;
use crate::subset::{derive_seed, Subset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    GaussianLogistic,
    UniformLogistic,
    CovariateMixture,
}

impl std::str::FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_logistic" => Ok(DgpKind::GaussianLogistic),
            "uniform_logistic" => Ok(DgpKind::UniformLogistic),
            "covariate_mixture" => Ok(DgpKind::CovariateMixture),
            other => Err(Error::config(format!(
                "unknown generator {other:?}; expected gaussian_logistic, uniform_logistic or covariate_mixture"
            ))),
        }
    }
}

/// Feature and outcome parameters of one domain. `means` and `coef` are
/// laid out as `(W, Z_1, .., Z_m2)`; there is no intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub means: Vec<f64>,
    pub coef: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub n_source: usize,
    pub n_target: usize,
    pub seed: u64,
    pub source: DomainParams,
    pub target: DomainParams,
    /// Distance between the two mixture components of `Z_2 | Z_1`
    /// (`covariate_mixture` only).
    #[serde(default)]
    pub mixture_gap: f64,
}

impl DgpSpec {
    /// Coverage setting: means `(0, 2, 0.7, 3) -> 0`, coefficients
    /// `(0.3, 1, 0.5, 1) -> (0.3, 0.1, 0.5, 1.4)`.
    pub fn gaussian_logistic(n: usize, seed: u64) -> Self {
        DgpSpec {
            kind: DgpKind::GaussianLogistic,
            n_source: n,
            n_target: n,
            seed,
            source: DomainParams {
                means: vec![0.0, 2.0, 0.7, 3.0],
                coef: vec![0.3, 1.0, 0.5, 1.0],
            },
            target: DomainParams {
                means: vec![0.0; 4],
                coef: vec![0.3, 0.1, 0.5, 1.4],
            },
            mixture_gap: 0.0,
        }
    }

    /// Outcome-shift setting with five uniform covariates.
    pub fn uniform_logistic(n: usize, seed: u64) -> Self {
        DgpSpec {
            kind: DgpKind::UniformLogistic,
            n_source: n,
            n_target: n,
            seed,
            source: DomainParams {
                means: vec![0.0; 6],
                coef: vec![0.2, 0.4, 2.0, 0.25, 0.1, 0.1],
            },
            target: DomainParams {
                means: vec![0.0; 6],
                coef: vec![0.2, -0.4, 0.8, 0.1, 0.1, 0.1],
            },
            mixture_gap: 0.0,
        }
    }

    /// Covariate-shift setting where only `Z_1` moves and `Z_2` inherits
    /// the shift through its dependence on `Z_1`.
    pub fn covariate_mixture(n: usize, seed: u64) -> Self {
        let coef = vec![1.0, 1.0, 0.5];
        DgpSpec {
            kind: DgpKind::CovariateMixture,
            n_source: n,
            n_target: n,
            seed,
            source: DomainParams {
                means: vec![0.0, 0.0, 0.0],
                coef: coef.clone(),
            },
            target: DomainParams {
                means: vec![0.0, 1.0, 0.0],
                coef,
            },
            mixture_gap: 2.0,
        }
    }

    /// Default parameters of `kind`.
    pub fn preset(kind: DgpKind, n: usize, seed: u64) -> Self {
        match kind {
            DgpKind::GaussianLogistic => DgpSpec::gaussian_logistic(n, seed),
            DgpKind::UniformLogistic => DgpSpec::uniform_logistic(n, seed),
            DgpKind::CovariateMixture => DgpSpec::covariate_mixture(n, seed),
        }
    }

    pub fn m2(&self) -> usize {
        self.source.coef.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::config("both domains need at least one row"));
        }
        let width = self.source.coef.len();
        if width < 2 {
            return Err(Error::config("coefficients must cover W and at least one Z"));
        }
        for p in [&self.source, &self.target] {
            if p.coef.len() != width || p.means.len() != width {
                return Err(Error::config(format!(
                    "every means/coef vector must have length 1 + m2 = {width}"
                )));
            }
            if p.coef.iter().chain(&p.means).any(|v| !v.is_finite()) {
                return Err(Error::config("generator parameters must be finite"));
            }
        }
        if self.kind == DgpKind::CovariateMixture && width != 3 {
            return Err(Error::config("covariate_mixture has exactly two Z variables"));
        }
        if !(self.mixture_gap.is_finite() && self.mixture_gap >= 0.0) {
            return Err(Error::config("mixture_gap must be finite and non-negative"));
        }
        Ok(())
    }

    fn params(&self, domain: u8) -> &DomainParams {
        if domain == SOURCE {
            &self.source
        } else {
            &self.target
        }
    }

    /// Bayes classifier of the source domain: predict 1 iff the source
    /// logit is non-negative.
    pub fn source_bayes_rule(&self) -> PredictionRule {
        PredictionRule::Linear(LinearRule {
            intercept: 0.0,
            w_coef: vec![self.source.coef[0]],
            z_coef: self.source.coef[1..].to_vec(),
        })
    }

    /// `p_d(Y = 1 | x)` for `x = (w, z)`.
    pub fn p_y(&self, domain: u8, x: &[f64]) -> f64 {
        let c = &self.params(domain).coef;
        sigmoid(x.iter().zip(c).map(|(a, b)| a * b).sum())
    }

    /// Draws `x = (w, z)` from domain `domain` into `x`.
    pub fn sample_x<R: Rng>(&self, domain: u8, rng: &mut R, x: &mut [f64]) {
        let p = self.params(domain);
        x[0] = match self.kind {
            DgpKind::UniformLogistic => rng.random_range(-1.0..1.0),
            _ => p.means[0] + rng.sample::<f64, _>(StandardNormal),
        };
        self.resample_rest(domain, x, &Subset::empty(), rng);
    }

    /// Redraws `Z_{-s}` from `p_domain(Z_{-s} | W, Z_s)`, keeping `W` and
    /// `Z_s` of `x`.
    pub fn resample_rest<R: Rng>(&self, domain: u8, x: &mut [f64], s: &Subset, rng: &mut R) {
        let p = self.params(domain);
        let m2 = self.m2();
        match self.kind {
            DgpKind::GaussianLogistic => {
                for j in (0..m2).filter(|&j| !s.contains(j)) {
                    x[1 + j] = p.means[1 + j] + rng.sample::<f64, _>(StandardNormal);
                }
            }
            DgpKind::UniformLogistic => {
                for j in (0..m2).filter(|&j| !s.contains(j)) {
                    x[1 + j] = rng.random_range(-1.0..1.0);
                }
            }
            DgpKind::CovariateMixture => {
                let half = 0.5 * self.mixture_gap;
                let m = p.means[1];
                match (s.contains(0), s.contains(1)) {
                    (true, true) => {}
                    (true, false) => x[2] = self.draw_z2(x[1], rng),
                    (false, false) => {
                        x[1] = m + rng.sample::<f64, _>(StandardNormal);
                        x[2] = self.draw_z2(x[1], rng);
                    }
                    (false, true) => {
                        // Z_1 | Z_2: each mixture component c gives
                        // Z_1 | Z_2, c ~ N((m + Z_2 - c)/2, 1/2) with weight
                        // proportional to N(Z_2; m + c, 2).
                        let z2 = x[2];
                        let lw = |c: f64| -(z2 - m - c).powi(2) / 4.0;
                        let (a, b) = (lw(half), lw(-half));
                        let p_plus = 1.0 / (1.0 + (b - a).exp());
                        let c = if rng.random::<f64>() < p_plus { half } else { -half };
                        x[1] = 0.5 * (m + z2 - c) + rng.sample::<f64, _>(StandardNormal) * 0.5f64.sqrt();
                    }
                }
            }
        }
    }

    fn draw_z2<R: Rng>(&self, z1: f64, rng: &mut R) -> f64 {
        let half = 0.5 * self.mixture_gap;
        let c = if rng.random::<bool>() { half } else { -half };
        z1 + c + rng.sample::<f64, _>(StandardNormal)
    }

    /// Draws the dataset and labels its loss with `rule`.
    pub fn generate_with(&self, rule: &PredictionRule) -> Result<Dataset> {
        self.validate()?;
        let width = self.source.coef.len();
        let m2 = width - 1;
        let mut w = Vec::with_capacity(self.n_source + self.n_target);
        let mut z = Vec::with_capacity((self.n_source + self.n_target) * m2);
        let mut y = Vec::new();
        let mut domain = Vec::new();
        let mut loss = Vec::new();
        let mut x = vec![0.0; width];
        for (d, n) in [(0u8, self.n_source), (1u8, self.n_target)] {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, d as u64));
            for _ in 0..n {
                self.sample_x(d, &mut rng, &mut x);
                let yi = if rng.random::<f64>() < self.p_y(d, &x) { 1.0 } else { 0.0 };
                w.push(x[0]);
                z.extend_from_slice(&x[1..]);
                loss.push(rule.loss(&x[..1], &x[1..], yi));
                y.push(yi);
                domain.push(d);
            }
        }
        let n = y.len();
        Dataset::new(
            Matrix::from_row_major(n, 1, w),
            Matrix::from_row_major(n, m2, z),
            y,
            domain,
            loss,
            vec!["W".to_string()],
            (1..=m2).map(|j| format!("Z{j}")).collect(),
        )
    }

    /// Draws the dataset with the source Bayes classifier as the model.
    pub fn generate(&self) -> Result<Dataset> {
        self.generate_with(&self.source_bayes_rule())
    }
}
