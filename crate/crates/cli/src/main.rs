//! `perfshift` command line: decompose a performance gap, simulate data,
//! run coverage experiments and render reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 degenerate
//! estimate, 5 internal failure. A decomposition that completes some stages
//! but not others writes its report and exits with the code of the first
//! failed stage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use perfshift::ingest::{write_csv, written_columns, ColumnMap, InputPaths, OutputPaths};
use perfshift::loss::{LinearRule, PredictionRule};
use perfshift::pipeline::GridPreset;
use perfshift::render::{render_svg, Panel};
use perfshift::simgen::coverage::{coverage_experiment, CoverageConfig, OracleSettings};
use perfshift::simgen::{DgpKind, DgpSpec};
use perfshift::{DecompositionReport, Error, EstimationOptions, Result, RunConfig, Subset, Target};

#[derive(Parser, Debug)]
#[command(name = "perfshift", version, about = "Explain why a fixed model performs differently on two domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the aggregate and detailed decompositions for one dataset.
    Decompose(DecomposeArgs),
    /// Draw a synthetic dataset and write it with a ready-to-run config.
    Simulate(SimulateArgs),
    /// Measure interval coverage over repeated simulated datasets.
    Coverage(CoverageArgs),
    /// Draw a JSON report as an SVG bar chart.
    Render(RenderArgs),
}

#[derive(Args, Debug, Clone)]
struct EstimationFlags {
    /// Targets to estimate (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = vec![Target::Aggregate, Target::DetailedCovariate, Target::DetailedOutcome].into_iter().map(TargetArg))]
    targets: Vec<TargetArg>,
    /// Interval level is 1 - alpha.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Risk bins for the outcome decomposition.
    #[arg(long)]
    bins: Option<usize>,
    /// Subset draws per evaluation row for the Shapley approximation.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Learner grid: `default` or `compact`.
    #[arg(long, default_value = "default", value_parser = parse_grid)]
    grid: GridPreset,
    /// Cross-fitting folds (single sample split when omitted).
    #[arg(long)]
    cross_fit: Option<usize>,
    /// Also report plug-in aggregate estimates.
    #[arg(long)]
    plugin: bool,
}

impl EstimationFlags {
    fn options(&self) -> EstimationOptions {
        let d = EstimationOptions::default();
        EstimationOptions {
            targets: self.targets.iter().map(|t| t.0).collect(),
            alpha: self.alpha,
            bins: self.bins.unwrap_or(d.bins),
            gamma: self.gamma.unwrap_or(d.gamma),
            seed: self.seed,
            grid: self.grid,
            cross_fit: self.cross_fit,
            plugin: self.plugin,
            ..d
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TargetArg(Target);

impl std::str::FromStr for TargetArg {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.parse().map(TargetArg)
    }
}

impl std::fmt::Display for TargetArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self.0 {
            Target::Aggregate => "aggregate",
            Target::DetailedCovariate => "detailed_covariate",
            Target::DetailedOutcome => "detailed_outcome",
        })
    }
}

fn parse_grid(s: &str) -> Result<GridPreset> {
    match s {
        "default" => Ok(GridPreset::Default),
        "compact" => Ok(GridPreset::Compact),
        other => Err(Error::Config(format!("unknown grid {other:?}; expected default or compact"))),
    }
}

/// Parses `1,3` (1-based indices into the Z columns) into a subset.
fn parse_subset(s: &str) -> Result<Subset> {
    let idx = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| match p.trim().parse::<usize>() {
            Ok(i) if i >= 1 => Ok(i - 1),
            _ => Err(Error::Config(format!("invalid subset {s:?}: use 1-based Z indices such as 1,3"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Subset::new(idx))
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    /// JSON run configuration. When given, its settings take precedence and
    /// flags only supply output paths it leaves unset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single CSV holding both domains (requires --domain-col).
    #[arg(long, conflicts_with_all = ["source", "target"])]
    data: Option<PathBuf>,
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    /// Baseline covariates W (comma separated).
    #[arg(long, value_delimiter = ',')]
    w_cols: Vec<String>,
    /// Shifted covariates Z (comma separated).
    #[arg(long, value_delimiter = ',')]
    z_cols: Vec<String>,
    #[arg(long)]
    y_col: Option<String>,
    #[arg(long)]
    domain_col: Option<String>,
    /// Per-row loss of the model.
    #[arg(long)]
    loss_col: Option<String>,
    /// Model predictions (labels, or scores with --threshold).
    #[arg(long)]
    pred_col: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    /// JSON file with a linear prediction rule
    /// `{"intercept":..,"w_coef":[..],"z_coef":[..]}`.
    #[arg(long)]
    rule: Option<PathBuf>,
    #[command(flatten)]
    estimation: EstimationFlags,
    /// Report path (stdout when omitted).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Also write an SVG chart of every section.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// `gaussian_logistic`, `uniform_logistic` or `covariate_mixture`.
    #[arg(long, default_value = "gaussian_logistic")]
    dgp: DgpKind,
    /// Full generator specification as JSON (overrides --dgp/--n/--seed).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Rows per domain.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Component distance for `covariate_mixture`.
    #[arg(long)]
    mixture_gap: Option<f64>,
    /// Directory receiving data.csv, config.json and spec.json.
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CoverageArgs {
    #[arg(long, default_value = "gaussian_logistic")]
    dgp: DgpKind,
    /// Rows per domain in each replication.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Generator seed; replication r uses a seed derived from it.
    #[arg(long, default_value_t = 2024)]
    dgp_seed: u64,
    /// Subsets whose values are checked, e.g. `--subset 1 --subset 1,3`
    /// (defaults to every single Z variable).
    #[arg(long = "subset", value_parser = parse_subset)]
    subsets: Vec<Subset>,
    #[command(flatten)]
    estimation: EstimationFlags,
    /// Oracle draws for aggregate truths.
    #[arg(long, default_value_t = OracleSettings::default().aggregate_draws)]
    oracle_draws: usize,
    /// Oracle outer draws for subset-value truths.
    #[arg(long, default_value_t = OracleSettings::default().outer)]
    oracle_outer: usize,
    /// Oracle inner draws for subset-value truths.
    #[arg(long, default_value_t = OracleSettings::default().inner)]
    oracle_inner: usize,
    /// CSV table of coverage rows (stdout when omitted).
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Full JSON table including truths.
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// JSON report written by `decompose`.
    report: PathBuf,
    /// `aggregate`, `covariate`, `outcome` or `all`.
    #[arg(long, default_value = "all")]
    panel: Panel,
    /// SVG path (stdout when omitted).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Data(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid {what} {}: {e}", path.display())))
}

fn pretty<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Internal(e.to_string()))
}

fn config_from_flags(a: &DecomposeArgs) -> Result<RunConfig> {
    let y_col = a.y_col.clone().ok_or_else(|| Error::Config("--y-col is required without --config".into()))?;
    if a.data.is_none() && a.source.is_none() {
        return Err(Error::Config("give --data or --source/--target (or --config)".into()));
    }
    let rule: Option<LinearRule> = a.rule.as_deref().map(|p| read_json(p, "rule")).transpose()?;
    Ok(RunConfig {
        input: InputPaths {
            data: a.data.clone(),
            source: a.source.clone(),
            target: a.target.clone(),
        },
        columns: ColumnMap {
            w_cols: a.w_cols.clone(),
            z_cols: a.z_cols.clone(),
            y_col,
            domain_col: a.domain_col.clone(),
            loss_col: a.loss_col.clone(),
            pred_col: a.pred_col.clone(),
            threshold: a.threshold,
        },
        options: a.estimation.options(),
        rule,
        output: OutputPaths {
            report: a.out.clone(),
            svg: a.svg.clone(),
        },
    })
}

fn decompose_cmd(a: DecomposeArgs) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(path) => {
            let mut cfg = RunConfig::from_file(path)?;
            cfg.output.report = cfg.output.report.or_else(|| a.out.clone());
            cfg.output.svg = cfg.output.svg.or_else(|| a.svg.clone());
            cfg
        }
        None => config_from_flags(&a)?,
    };
    cfg.validate()?;
    let report = perfshift::run(&cfg)?;
    for w in &report.warnings {
        eprintln!("warning [{}] {}: {}", w.stage, w.code, w.message);
    }
    for f in &report.failures {
        eprintln!("stage {} failed: {} ({})", f.stage, f.message, f.hint);
    }
    write_text(cfg.output.report.as_deref(), &(report.to_json()? + "\n"))?;
    if let Some(svg) = cfg.output.svg.take() {
        match render_svg(&report, Panel::All) {
            Ok(text) => write_text(Some(&svg), &text)?,
            Err(e) => eprintln!("no chart written: {e}"),
        }
    }
    Ok(report.exit_code())
}

fn simulate_cmd(a: SimulateArgs) -> Result<i32> {
    let mut spec = match &a.spec {
        Some(p) => read_json::<DgpSpec>(p, "generator spec")?,
        None => DgpSpec::preset(a.dgp, a.n, a.seed),
    };
    if let Some(gap) = a.mixture_gap {
        spec.mixture_gap = gap;
    }
    spec.validate()?;
    let data = spec.generate()?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", a.out_dir.display())))?;
    let rule = spec.source_bayes_rule();
    write_csv(&data, Some(&rule), &a.out_dir.join("data.csv"))?;
    let linear = match rule {
        PredictionRule::Linear(l) => Some(l),
        _ => None,
    };
    let cfg = RunConfig {
        input: InputPaths {
            data: Some("data.csv".into()),
            ..InputPaths::default()
        },
        columns: written_columns(&data),
        options: EstimationOptions::default(),
        rule: linear,
        output: OutputPaths {
            report: Some("report.json".into()),
            svg: Some("report.svg".into()),
        },
    };
    write_text(Some(&a.out_dir.join("config.json")), &pretty(&cfg)?)?;
    write_text(Some(&a.out_dir.join("spec.json")), &pretty(&spec)?)?;
    eprintln!(
        "wrote {} source and {} target rows to {}",
        spec.n_source,
        spec.n_target,
        a.out_dir.display()
    );
    Ok(0)
}

fn coverage_cmd(a: CoverageArgs) -> Result<i32> {
    let spec = DgpSpec::preset(a.dgp, a.n, a.dgp_seed);
    let subsets = if a.subsets.is_empty() {
        (0..spec.m2()).map(|j| Subset::new(vec![j])).collect()
    } else {
        a.subsets
    };
    let cfg = CoverageConfig {
        spec,
        reps: a.reps,
        subsets,
        options: a.estimation.options(),
        oracle: OracleSettings {
            aggregate_draws: a.oracle_draws,
            outer: a.oracle_outer,
            inner: a.oracle_inner,
            ..OracleSettings::default()
        },
        truths: None,
    };
    let table = coverage_experiment(&cfg)?;
    write_text(a.out_csv.as_deref(), &table.to_csv()?)?;
    if let Some(p) = &a.out_json {
        write_text(Some(p), &pretty(&table)?)?;
    }
    Ok(0)
}

fn render_cmd(a: RenderArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&a.report)
        .map_err(|e| Error::Config(format!("cannot read report {}: {e}", a.report.display())))?;
    let report = DecompositionReport::from_json(&text)?;
    write_text(a.out.as_deref(), &render_svg(&report, a.panel)?)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Decompose(a) => decompose_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Coverage(a) => coverage_cmd(a),
        Command::Render(a) => render_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
