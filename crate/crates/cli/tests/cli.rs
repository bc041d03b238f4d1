use std::path::Path;
use std::process::{Command, Output};

use perfshift::loss::PredictionRule;
use perfshift::pipeline::GridPreset;
use perfshift::simgen::DgpSpec;
use perfshift::{decompose, DecompositionReport, EstimationOptions, Target};

fn perfshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perfshift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, n: usize, seed: u64) {
    let o = perfshift(&["simulate", "--n", &n.to_string(), "--seed", &seed.to_string(), "-o", path(dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn spec_of(dir: &Path) -> DgpSpec {
    serde_json::from_str(&std::fs::read_to_string(dir.join("spec.json")).unwrap()).unwrap()
}

fn write_rule(dir: &Path, spec: &DgpSpec) -> std::path::PathBuf {
    let PredictionRule::Linear(rule) = spec.source_bayes_rule() else {
        unreachable!()
    };
    let p = dir.join("rule.json");
    std::fs::write(&p, serde_json::to_string(&rule).unwrap()).unwrap();
    p
}

fn aggregate_report(dir: &Path, extra: &[&str]) -> (Output, DecompositionReport) {
    let out = dir.join("agg.json");
    let data = dir.join("data.csv");
    let rule = write_rule(dir, &spec_of(dir));
    let mut args = vec![
        "decompose",
        "--data",
        path(&data),
        "--w-cols",
        "W",
        "--z-cols",
        "Z1,Z2,Z3",
        "--y-col",
        "y",
        "--domain-col",
        "domain",
        "--loss-col",
        "loss",
        "--rule",
        path(&rule),
        "--targets",
        "aggregate",
        "--grid",
        "compact",
        "-o",
        path(&out),
    ];
    args.extend_from_slice(extra);
    let o = perfshift(&args);
    let report = DecompositionReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    (o, report)
}

#[test]
fn unknown_column_is_named_and_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 100, 1);
    let data = dir.path().join("data.csv");
    let o = perfshift(&[
        "decompose", "--data", path(&data), "--z-cols", "Z1,Zmissing", "--y-col", "y", "--domain-col", "domain",
        "--loss-col", "loss",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("\"Zmissing\""), "{}", stderr(&o));
}

#[test]
fn conflicting_column_roles_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 100, 1);
    let data = dir.path().join("data.csv");
    let o = perfshift(&[
        "decompose", "--data", path(&data), "--z-cols", "Z1", "--y-col", "y", "--domain-col", "domain",
        "--loss-col", "loss", "--pred-col", "pred",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not both"), "{}", stderr(&o));
}

#[test]
fn non_numeric_cell_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "z,y,domain,loss\n0.1,1,0,0\nabc,0,1,1\n").unwrap();
    let o = perfshift(&[
        "decompose", "--data", path(&data), "--z-cols", "z", "--y-col", "y", "--domain-col", "domain",
        "--loss-col", "loss",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn simulate_then_decompose_matches_the_library_exactly() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 600, 11);
    let (o, report) = aggregate_report(dir.path(), &["--plugin"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let spec = spec_of(dir.path());
    let data = spec.generate().unwrap();
    let opts = EstimationOptions {
        targets: vec![Target::Aggregate],
        grid: GridPreset::Compact,
        plugin: true,
        ..EstimationOptions::default()
    };
    let lib = decompose(&data, Some(&spec.source_bayes_rule()), &opts).unwrap();
    let (cli_agg, lib_agg) = (report.aggregate.unwrap(), lib.aggregate.unwrap());
    for name in ["lambda_w", "lambda_z", "lambda_y", "total"] {
        let (a, b) = (cli_agg.term(name).unwrap(), lib_agg.term(name).unwrap());
        assert_eq!(a.point.to_bits(), b.point.to_bits(), "{name}");
        assert_eq!(a.se.to_bits(), b.se.to_bits(), "{name}");
        assert_eq!(cli_agg.plugin_term(name).unwrap().point.to_bits(), lib_agg.plugin_term(name).unwrap().point.to_bits());
    }
}

#[test]
fn identical_domains_give_a_total_near_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = DgpSpec::gaussian_logistic(1500, 5);
    spec.target = spec.source.clone();
    let spec_path = dir.path().join("in_spec.json");
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let o = perfshift(&["simulate", "--spec", path(&spec_path), "-o", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));

    let (o, report) = aggregate_report(dir.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let agg = report.aggregate.unwrap();
    for name in ["lambda_w", "lambda_z", "lambda_y", "total"] {
        let t = agg.term(name).unwrap();
        assert!(t.ci_lo <= 0.0 && 0.0 <= t.ci_hi, "{name}: {t:?}");
    }
    assert!(agg.term("total").unwrap().point.abs() < 0.03);
}

#[test]
fn generated_config_runs_and_render_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 400, 2);
    let cfg_path = dir.path().join("config.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["options"]["targets"] = serde_json::json!(["aggregate", "detailed_covariate"]);
    cfg["options"]["grid"] = serde_json::json!("compact");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();

    let o = perfshift(&["decompose", "--config", path(&cfg_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = dir.path().join("report.json");
    let svg = std::fs::read_to_string(dir.path().join("report.svg")).unwrap();
    let o = perfshift(&["render", path(&report)]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap(), svg);

    let o = perfshift(&["render", path(&report), "--panel", "outcome"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("outcome"));
}

#[test]
fn bad_arguments_exit_with_config_code() {
    assert_eq!(perfshift(&["decompose", "--targets", "everything"]).status.code(), Some(2));
    assert_eq!(perfshift(&["coverage", "--reps", "3"]).status.code(), Some(2));
    assert_eq!(perfshift(&["simulate", "--dgp", "cauchy", "-o", "x"]).status.code(), Some(2));
    assert_eq!(perfshift(&["decompose", "--z-cols", "a"]).status.code(), Some(2));
}

#[test]
fn small_coverage_run_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, json) = (dir.path().join("cov.csv"), dir.path().join("cov.json"));
    let o = perfshift(&[
        "coverage", "--n", "300", "--reps", "10", "--targets", "aggregate", "--grid", "compact",
        "--oracle-draws", "200000", "--out-csv", path(&csv), "--out-json", path(&json),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("target,estimator,n,truth,coverage"));
    assert_eq!(text.lines().count(), 5);
    let table: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(table["reps"], 10);
}
