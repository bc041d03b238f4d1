//! CSV input, the run configuration document, and the end-to-end `run`.
//!
//! Input is either one file with a domain column or a source file and a
//! target file. A column map assigns roles: `w_cols`, `z_cols`, `y_col`,
//! and exactly one of `loss_col` (per-row loss) or `pred_col` (model output,
//! a label or, with `threshold`, a score turned into a label).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{compute_loss, Dataset, LossMode, SOURCE, TARGET};
use crate::error::{Error, Result};
use crate::learners::{fit_cv, Task};
use crate::loss::{label_from_loss, LinearRule, PredictionRule};
use crate::matrix::Matrix;
use crate::pipeline::{decompose, EstimationOptions, Target};
use crate::report::DecompositionReport;
use crate::subset::derive_seed;

const SURROGATE_KEY: u64 = 7;

/// Roles of the input columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    #[serde(default)]
    pub w_cols: Vec<String>,
    pub z_cols: Vec<String>,
    pub y_col: String,
    /// Domain flag (0 = source, 1 = target); required for single-file input.
    #[serde(default)]
    pub domain_col: Option<String>,
    #[serde(default)]
    pub loss_col: Option<String>,
    #[serde(default)]
    pub pred_col: Option<String>,
    /// Turns `pred_col` scores into labels (`score >= threshold`).
    #[serde(default)]
    pub threshold: Option<f64>,
}

impl ColumnMap {
    pub fn validate(&self) -> Result<()> {
        if self.z_cols.is_empty() {
            return Err(Error::Config("column map: z_cols must name at least one column".into()));
        }
        match (&self.loss_col, &self.pred_col) {
            (Some(_), Some(_)) => Err(Error::Config("column map: give loss_col or pred_col, not both".into())),
            (None, None) => Err(Error::Config("column map: one of loss_col or pred_col is required".into())),
            (Some(_), None) if self.threshold.is_some() => {
                Err(Error::Config("column map: threshold applies only to pred_col".into()))
            }
            _ => match self.threshold {
                Some(t) if !(t > 0.0 && t < 1.0) => {
                    Err(Error::Config(format!("column map: threshold must lie in (0,1), got {t}")))
                }
                _ => Ok(()),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    /// One file holding both domains (needs `domain_col`).
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub target: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub svg: Option<PathBuf>,
}

/// Everything needed to reproduce one decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputPaths,
    pub columns: ColumnMap,
    #[serde(default)]
    pub options: EstimationOptions,
    /// Known linear prediction rule of the explained model; when absent
    /// and the outcome decomposition is requested, a surrogate is fitted to
    /// the model's labels.
    #[serde(default)]
    pub rule: Option<LinearRule>,
    #[serde(default)]
    pub output: OutputPaths,
}

impl RunConfig {
    /// Reads a JSON configuration; relative paths are resolved against the
    /// directory of the file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.input.data,
            &mut self.input.source,
            &mut self.input.target,
            &mut self.output.report,
            &mut self.output.svg,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.columns.validate()?;
        self.options.validate()?;
        match (&self.input.data, &self.input.source, &self.input.target) {
            (Some(_), None, None) => {
                if self.columns.domain_col.is_none() {
                    return Err(Error::Config("single-file input needs columns.domain_col".into()));
                }
            }
            (None, Some(_), Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "input: give either `data` (with a domain column) or both `source` and `target`".into(),
                ))
            }
        }
        if let Some(rule) = &self.rule {
            if rule.w_coef.len() != self.columns.w_cols.len() || rule.z_coef.len() != self.columns.z_cols.len() {
                return Err(Error::Config(format!(
                    "rule has {} w and {} z coefficients but the column map has {} and {}",
                    rule.w_coef.len(),
                    rule.z_coef.len(),
                    self.columns.w_cols.len(),
                    self.columns.z_cols.len()
                )));
            }
        }
        Ok(())
    }
}

/// Numeric columns read from one CSV file.
struct Table {
    name: String,
    columns: HashMap<String, Vec<f64>>,
    rows: usize,
}

impl Table {
    fn read(path: &Path, wanted: &[&str]) -> Result<Table> {
        let name = path.display().to_string();
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("cannot read {name}: {e}")))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Data(format!("{name}: bad header row: {e}")))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut index = Vec::with_capacity(wanted.len());
        for &col in wanted {
            match headers.iter().position(|h| h == col) {
                Some(i) => index.push((col.to_string(), i)),
                None => {
                    return Err(Error::Config(format!(
                        "column {col:?} not found in {name}; available columns: {}",
                        headers.join(", ")
                    )))
                }
            }
        }
        let mut columns: HashMap<String, Vec<f64>> = index.iter().map(|(c, _)| (c.clone(), Vec::new())).collect();
        let mut rows = 0;
        for (r, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Data(format!("{name}: {e}")))?;
            for (col, i) in &index {
                let raw = record.get(*i).unwrap_or("").trim();
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Data(format!(
                        "{name}: row {} column {col:?}: {:?} is not a number (missing values are not accepted)",
                        r + 2,
                        raw
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "{name}: row {} column {col:?} is not finite (missing values are not accepted)",
                        r + 2
                    )));
                }
                columns.get_mut(col).expect("column registered").push(v);
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Data(format!("{name} has no data rows")));
        }
        Ok(Table {
            name,
            columns,
            rows,
        })
    }

    fn col(&self, name: &str) -> &[f64] {
        &self.columns[name]
    }

    fn matrix(&self, cols: &[String]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            for c in cols {
                data.push(self.col(c)[i]);
            }
        }
        Matrix::from_row_major(self.rows, cols.len(), data)
    }
}

/// A loaded sample plus the explained model's prediction rule, if one is
/// available.
#[derive(Debug, Clone)]
pub struct LoadedInput {
    pub dataset: Dataset,
    pub rule: Option<PredictionRule>,
}

fn wanted_columns(map: &ColumnMap, with_domain: bool) -> Vec<&str> {
    let mut v: Vec<&str> = map.w_cols.iter().chain(&map.z_cols).map(String::as_str).collect();
    v.push(&map.y_col);
    if with_domain {
        v.push(map.domain_col.as_deref().expect("validated"));
    }
    v.extend(map.loss_col.as_deref());
    v.extend(map.pred_col.as_deref());
    let mut seen = std::collections::HashSet::new();
    v.retain(|c| seen.insert(*c));
    v
}

/// Reads the configured input into a dataset. Returns the dataset and, for
/// `pred_col` inputs, the per-row predicted labels.
fn read_input(cfg: &RunConfig) -> Result<(Dataset, Option<Vec<f64>>)> {
    let map = &cfg.columns;
    let tables: Vec<(Table, Option<u8>)> = match (&cfg.input.data, &cfg.input.source, &cfg.input.target) {
        (Some(path), None, None) => vec![(Table::read(path, &wanted_columns(map, true))?, None)],
        (None, Some(src), Some(tgt)) => vec![
            (Table::read(src, &wanted_columns(map, false))?, Some(SOURCE)),
            (Table::read(tgt, &wanted_columns(map, false))?, Some(TARGET)),
        ],
        _ => unreachable!("validated"),
    };
    let mut w_rows = Vec::new();
    let mut z_rows = Vec::new();
    let mut y = Vec::new();
    let mut domain = Vec::new();
    let mut loss = Vec::new();
    let mut labels = Vec::new();
    for (table, fixed_domain) in &tables {
        let ty = table.col(&map.y_col);
        if let Some(i) = ty.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!(
                "{}: row {} column {:?} must be 0 or 1, got {}",
                table.name,
                i + 2,
                map.y_col,
                ty[i]
            )));
        }
        match fixed_domain {
            Some(d) => domain.extend(std::iter::repeat_n(*d, table.rows)),
            None => {
                let col = map.domain_col.as_deref().expect("validated");
                for (i, &v) in table.col(col).iter().enumerate() {
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Data(format!(
                            "{}: row {} column {col:?} must be 0 (source) or 1 (target), got {v}",
                            table.name,
                            i + 2
                        )));
                    }
                    domain.push(v as u8);
                }
            }
        }
        if let Some(col) = &map.pred_col {
            let mode = match map.threshold {
                Some(threshold) => LossMode::ZeroOneFromScore { threshold },
                None => LossMode::ZeroOneFromLabel,
            };
            let preds = table.col(col);
            let l = compute_loss(preds, ty, mode).map_err(|e| Error::Data(format!("{}: {col:?}: {e}", table.name)))?;
            labels.extend(l.iter().zip(ty).map(|(&li, &yi)| label_from_loss(yi, li)));
            loss.extend(l);
        } else {
            let col = map.loss_col.as_deref().expect("validated");
            loss.extend_from_slice(table.col(col));
        }
        w_rows.push(table.matrix(&map.w_cols));
        z_rows.push(table.matrix(&map.z_cols));
        y.extend_from_slice(ty);
    }
    let stack = |parts: Vec<Matrix>| {
        parts
            .into_iter()
            .reduce(|a, b| a.vstack(&b))
            .expect("at least one table")
    };
    let dataset = Dataset::new(
        stack(w_rows),
        stack(z_rows),
        y,
        domain,
        loss,
        map.w_cols.clone(),
        map.z_cols.clone(),
    )?;
    Ok((dataset, map.pred_col.is_some().then_some(labels)))
}

/// Fits a classifier of the model's predicted label on `[W | Z]`.
pub fn fit_surrogate_rule(data: &Dataset, labels: &[f64], opts: &EstimationOptions) -> Result<PredictionRule> {
    let rows: Vec<usize> = (0..data.n()).collect();
    let x = data.design_full(&rows);
    let fit = fit_cv(
        &opts.candidate_list(),
        &x,
        labels,
        Task::Classification,
        opts.folds,
        derive_seed(opts.seed, SURROGATE_KEY),
    )?;
    Ok(PredictionRule::Surrogate { model: fit.model })
}

/// Loads the input and determines the prediction rule: the configured
/// linear rule, else (only when the outcome decomposition is requested) a
/// surrogate fitted to predicted labels from `pred_col` or recovered from a
/// 0-1 `loss_col`. Non-0-1 losses without a rule leave the rule unset.
pub fn load(cfg: &RunConfig) -> Result<LoadedInput> {
    cfg.validate()?;
    let (dataset, labels) = read_input(cfg)?;
    let rule = match (&cfg.rule, labels) {
        (Some(rule), _) => Some(PredictionRule::Linear(rule.clone())),
        (None, _) if !cfg.options.wants(Target::DetailedOutcome) => None,
        (None, Some(labels)) => Some(fit_surrogate_rule(&dataset, &labels, &cfg.options)?),
        (None, None) if dataset.has_zero_one_loss() => {
            let labels: Vec<f64> = dataset.y().iter().zip(dataset.loss()).map(|(&y, &l)| label_from_loss(y, l)).collect();
            Some(fit_surrogate_rule(&dataset, &labels, &cfg.options)?)
        }
        (None, None) => None,
    };
    Ok(LoadedInput { dataset, rule })
}

/// Loads the input and runs every configured target.
pub fn run(cfg: &RunConfig) -> Result<DecompositionReport> {
    let input = load(cfg)?;
    decompose(&input.dataset, input.rule.as_ref(), &cfg.options)
}

/// Writes a dataset as one CSV with columns `W.., Z.., y, domain, loss`
/// and, when a rule is given, the model's predicted label `pred`.
pub fn write_csv(data: &Dataset, rule: Option<&PredictionRule>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    let mut header: Vec<String> = data.w_names().iter().chain(data.z_names()).cloned().collect();
    header.extend(["y", "domain", "loss"].map(String::from));
    if rule.is_some() {
        header.push("pred".into());
    }
    w.write_record(&header)?;
    for i in 0..data.n() {
        let (wr, zr) = (data.w().row(i), data.z().row(i));
        let mut rec: Vec<String> = wr.iter().chain(zr).map(|v| v.to_string()).collect();
        rec.push(data.y()[i].to_string());
        rec.push(data.domain()[i].to_string());
        rec.push(data.loss()[i].to_string());
        if let Some(rule) = rule {
            rec.push(rule.predict(wr, zr).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Column map matching [`write_csv`] output.
pub fn written_columns(data: &Dataset) -> ColumnMap {
    ColumnMap {
        w_cols: data.w_names().to_vec(),
        z_cols: data.z_names().to_vec(),
        y_col: "y".into(),
        domain_col: Some("domain".into()),
        loss_col: Some("loss".into()),
        pred_col: None,
        threshold: None,
    }
}
