use perfshift::pipeline::GridPreset;
use perfshift::simgen::coverage::{coverage_experiment, CoverageConfig, OracleSettings};
use perfshift::simgen::DgpSpec;
use perfshift::{Dataset, EstimationOptions, Target};
use statrs::distribution::{ContinuousCDF, Normal};

fn feature_means(data: &Dataset, domain: u8) -> Vec<f64> {
    let rows: Vec<usize> = (0..data.n()).filter(|&i| data.domain()[i] == domain).collect();
    let (w, z) = (data.w(), data.z());
    let mut sums = vec![0.0; data.m1() + data.m2()];
    for &i in &rows {
        for (s, v) in sums.iter_mut().zip(w.row(i).iter().chain(z.row(i))) {
            *s += v;
        }
    }
    sums.iter().map(|s| s / rows.len() as f64).collect()
}

#[test]
fn gaussian_feature_means_match_the_generator_parameters() {
    let spec = DgpSpec::gaussian_logistic(1_000_000, 3);
    let data = spec.generate().unwrap();
    for (domain, params) in [(0u8, &spec.source), (1, &spec.target)] {
        let got = feature_means(&data, domain);
        for (g, want) in got.iter().zip(&params.means) {
            assert!((g - want).abs() < 0.01, "domain {domain}: {got:?} vs {:?}", params.means);
        }
    }
}

/// Kolmogorov–Smirnov distance between a sample and the standard normal.
fn ks_standard_normal(mut sample: Vec<f64>) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn mixture_residuals(gap: f64) -> Vec<f64> {
    let mut spec = DgpSpec::covariate_mixture(20_000, 9);
    spec.mixture_gap = gap;
    let data = spec.generate().unwrap();
    let z = data.z();
    (0..data.n()).map(|i| z.row(i)[1] - z.row(i)[0]).collect()
}

#[test]
fn zero_mixture_gap_gives_a_single_gaussian() {
    let n = 40_000.0f64;
    // 1% critical value of the one-sample KS statistic.
    let critical = 1.63 / n.sqrt();
    let d0 = ks_standard_normal(mixture_residuals(0.0));
    assert!(d0 < critical, "gap 0: KS {d0:.4} >= {critical:.4}");
    let d2 = ks_standard_normal(mixture_residuals(2.0));
    assert!(d2 > 5.0 * critical, "gap 2 should be clearly bimodal: KS {d2:.4}");
}

#[test]
fn intervals_cover_the_mean_estimate() {
    let reps = 20;
    let cfg = CoverageConfig {
        spec: DgpSpec::gaussian_logistic(500, 17),
        reps,
        subsets: Vec::new(),
        options: EstimationOptions {
            targets: vec![Target::Aggregate],
            grid: GridPreset::Compact,
            ..EstimationOptions::default()
        },
        oracle: OracleSettings {
            aggregate_draws: 200_000,
            ..OracleSettings::default()
        },
        truths: None,
    };
    let table = coverage_experiment(&cfg).unwrap();
    let floor = 0.90 - 2.0 / (reps as f64).sqrt();
    for row in &table.rows {
        assert_eq!(row.failed_reps, 0);
        assert!(row.coverage_of_mean >= floor, "{}: {} < {floor}", row.target, row.coverage_of_mean);
    }
}
