//! End-to-end runs of the five subcommands through the compiled binary.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsc"))
        .args(args)
        .output()
        .expect("spawn hsc")
}

fn run(args: &[&str]) -> Output {
    let out = hsc(args);
    assert!(
        out.status.success(),
        "hsc {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn csv_column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header = lines.next().expect("csv header");
    let idx = header
        .split(',')
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name:?} in header {header:?}"));
    lines.map(|l| l.split(',').nth(idx).unwrap_or("").to_string()).collect()
}

/// Simulate a small committed-only cohort and return its dataset path.
fn small_cohort(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join("sim");
    run(&[
        "simulate",
        "--model", "SCD",
        "--rate", "lambda=0.09",
        "--rate", "nu=0.08",
        "--rate", "mu=0.14",
        "--n-animals", "4",
        "--horizon", "24",
        "--sample-size", "fixed:40",
        "--seed", seed,
        "--out", out.to_str().unwrap(),
    ]);
    out.join("dataset.csv")
}

fn quick_fit(data: &Path, model: &str, seed: &str, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "fit",
        "--data", data.to_str().unwrap(),
        "--model", model,
        "--iters", "200",
        "--burnin", "50",
        "--thin", "3",
        "--path-moves", "fixed:40",
        "--seed", seed,
        "--out", out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args);
}

#[test]
fn repeated_fits_write_byte_identical_draw_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_cohort(tmp.path(), "11");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    quick_fit(&data, "SCD", "7", &a, &["--prior", "gamma:5,50"]);
    quick_fit(&data, "SCD", "7", &b, &["--prior", "gamma:5,50"]);
    for file in ["draws.jsonl", "fit.json", "summary.csv", "manifest.txt"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn a_manifest_re_runs_its_command_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_cohort(tmp.path(), "12");
    let first = tmp.path().join("first");
    quick_fit(&data, "SCD", "3", &first, &[]);

    let rerun = tmp.path().join("rerun");
    run(&[
        "--config", first.join("manifest.txt").to_str().unwrap(),
        "fit",
        "--out", rerun.to_str().unwrap(),
    ]);
    for file in ["draws.jsonl", "fit.json", "summary.csv", "manifest.txt"] {
        assert_eq!(
            std::fs::read(first.join(file)).unwrap(),
            std::fs::read(rerun.join(file)).unwrap(),
            "{file} differs after the manifest-driven re-run"
        );
    }
}

#[test]
fn evidence_reports_bayes_factors_relative_to_the_first_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_cohort(tmp.path(), "13");
    let (scd, scdap) = (tmp.path().join("scd"), tmp.path().join("scdap"));
    quick_fit(&data, "SCD", "7", &scd, &[]);
    quick_fit(&data, "SCDAp", "9", &scdap, &[]);

    let out = tmp.path().join("ev");
    run(&[
        "evidence",
        "--fit", &format!("scd={}", scd.display()),
        "--fit", &format!("scdap={}", scdap.display()),
        "--out", out.to_str().unwrap(),
    ]);

    let csv = read(&out.join("evidence.csv"));
    let models = csv_column(&csv, "model");
    assert_eq!(models, ["SCD", "SCDAp"]);
    let bf: Vec<f64> =
        csv_column(&csv, "bf_vs_baseline").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(bf[0], 1.0, "the first fit is its own baseline");
    assert!(bf[1].is_finite() && bf[1] > 0.0, "Bayes factor {} must be positive", bf[1]);
    for v in csv_column(&csv, "log_evidence") {
        let v: f64 = v.parse().unwrap();
        assert!(v.is_finite());
    }
}

#[test]
fn rate_conditioned_evidence_produces_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_cohort(tmp.path(), "14");
    let (scd, scdap) = (tmp.path().join("scd"), tmp.path().join("scdap"));
    quick_fit(&data, "SCD", "7", &scd, &[]);
    quick_fit(&data, "SCDAp", "9", &scdap, &[]);

    let out = tmp.path().join("ev");
    run(&[
        "evidence",
        "--fit", &format!("scd={}", scd.display()),
        "--fit", &format!("scdap={}", scdap.display()),
        "--condition", "lambda",
        "--data", data.to_str().unwrap(),
        "--seed", "31",
        "--inner-iters", "40",
        "--inner-burnin", "10",
        "--inner-thin", "2",
        "--inner-draws", "3",
        "--out", out.to_str().unwrap(),
    ]);

    let csv = read(&out.join("evidence.csv"));
    assert_eq!(csv_column(&csv, "conditioning"), ["lambda", "lambda"]);
    let bf: Vec<f64> =
        csv_column(&csv, "bf_vs_baseline").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(bf[0], 1.0);
    assert!(bf[1].is_finite() && bf[1] > 0.0);
}

#[test]
fn assess_at_the_reported_rates_reaches_the_reported_die_out() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_cohort(tmp.path(), "15");
    let out = tmp.path().join("assess");
    run(&[
        "assess",
        "--data", data.to_str().unwrap(),
        "--model", "CDAsAp",
        "--rate", "nu=0.00738",
        "--rate", "mu=0.05969",
        "--rate", "eta=0.03338",
        "--rate", "alpha=0.00426",
        "--n-virtual", "50",
        "--horizon", "700",
        "--seed", "41",
        "--out", out.to_str().unwrap(),
    ]);
    let csv = read(&out.join("assess.csv"));
    let criteria = csv_column(&csv, "criterion");
    let stats = csv_column(&csv, "statistic");
    let idx = criteria.iter().position(|c| c == "die_out_rate").expect("die_out_rate row");
    let rate: f64 = stats[idx].parse().unwrap();
    assert!(rate >= 0.96, "die-out rate {rate} under the extinction-prone variant");
}

#[test]
fn a_fitted_model_can_be_assessed_from_its_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_cohort(tmp.path(), "16");
    let fit = tmp.path().join("fit");
    quick_fit(&data, "SCD", "5", &fit, &[]);

    let out = tmp.path().join("assess");
    run(&[
        "assess",
        "--data", data.to_str().unwrap(),
        "--fit", fit.to_str().unwrap(),
        "--max-draws", "10",
        "--n-virtual", "12",
        "--seed", "42",
        "--out", out.to_str().unwrap(),
    ]);
    let csv = read(&out.join("assess.csv"));
    for (criterion, p) in csv_column(&csv, "criterion").iter().zip(csv_column(&csv, "p_value")) {
        if criterion == "die_out_rate" {
            continue;
        }
        let p: f64 = p.parse().unwrap();
        assert!((0.0..=1.0).contains(&p), "{criterion} p-value {p} out of range");
    }
    let manifest = read(&out.join("manifest.txt"));
    assert!(manifest.contains("max-draws=10"));
    assert!(!manifest.contains("model="), "fit-driven assess echoes the fit, not a model");
}

#[test]
fn usage_and_data_errors_use_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_cohort(tmp.path(), "17");
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();

    let usage_cases: Vec<Vec<&str>> = vec![
        // unknown model name
        vec!["simulate", "--model", "XQ", "--n-animals", "2", "--horizon", "5",
             "--sample-size", "fixed:10", "--seed", "1", "--out", out],
        // mandatory seed missing
        vec!["fit", "--data", data.to_str().unwrap(), "--model", "SCD", "--out", out],
        // observed sample sizes only exist in assess
        vec!["simulate", "--model", "SCD", "--rate", "lambda=0.1", "--rate", "nu=0.1",
             "--rate", "mu=0.1", "--n-animals", "2", "--horizon", "5",
             "--sample-size", "observed", "--seed", "1", "--out", out],
        // fit and model are mutually exclusive
        vec!["assess", "--data", data.to_str().unwrap(), "--fit", "somewhere",
             "--model", "SCD", "--n-virtual", "5", "--seed", "1", "--out", out],
    ];
    for args in usage_cases {
        let result = hsc(&args);
        assert_eq!(result.status.code(), Some(2), "expected usage exit for {args:?}");
    }

    let bad_csv = tmp.path().join("bad.csv");
    std::fs::write(&bad_csv, "animal_id,week,sample_size,d_count\nm1,1.0,10,99\n").unwrap();
    let data_cases: Vec<Vec<&str>> = vec![
        // d_count exceeding sample_size violates the dataset invariant
        vec!["fit", "--data", bad_csv.to_str().unwrap(), "--model", "SCD",
             "--seed", "1", "--out", out],
        // missing dataset file
        vec!["fit", "--data", "/nonexistent/data.csv", "--model", "SCD",
             "--seed", "1", "--out", out],
        // missing fit directory
        vec!["summarize", "--fit", "/nonexistent/fit", "--out", out],
    ];
    for args in data_cases {
        let result = hsc(&args);
        assert_eq!(result.status.code(), Some(1), "expected data exit for {args:?}");
        let stderr = String::from_utf8_lossy(&result.stderr);
        assert!(stderr.starts_with("error:"), "stderr was {stderr:?}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("run.conf");
    std::fs::write(
        &conf,
        "model = SCD\nrate.lambda = 0.09\nrate.nu = 0.08\nrate.mu = 0.14\n\
         n-animals = 3\nhorizon = 12\nsample-size = fixed:25\nseed = 77\n",
    )
    .unwrap();

    let from_file = tmp.path().join("from-file");
    run(&["--config", conf.to_str().unwrap(), "simulate", "--out", from_file.to_str().unwrap()]);
    let manifest = read(&from_file.join("manifest.txt"));
    assert!(manifest.contains("n-animals=3"));
    assert!(manifest.contains("seed=77"));

    let overridden = tmp.path().join("overridden");
    run(&[
        "--config", conf.to_str().unwrap(),
        "simulate",
        "--n-animals", "5",
        "--out", overridden.to_str().unwrap(),
    ]);
    assert!(read(&overridden.join("manifest.txt")).contains("n-animals=5"));

    let broken = tmp.path().join("broken.conf");
    std::fs::write(&broken, "model SCD\n").unwrap();
    let result = hsc(&["--config", broken.to_str().unwrap(), "simulate", "--out", "x"]);
    assert_eq!(result.status.code(), Some(2), "malformed config line is a usage error");
}

#[test]
fn heterogeneity_report_contrasts_pooled_and_per_animal_fits() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_cohort(tmp.path(), "18");
    let (pooled, per) = (tmp.path().join("pooled"), tmp.path().join("per"));
    quick_fit(&data, "SCD", "7", &pooled, &[]);
    quick_fit(&data, "SCD", "8", &per, &["--pooling", "per-animal"]);

    let out = tmp.path().join("ev");
    run(&[
        "evidence",
        "--fit", &format!("pooled={}", pooled.display()),
        "--fit", &format!("per={}", per.display()),
        "--heterogeneity", "pooled,per",
        "--out", out.to_str().unwrap(),
    ]);
    let csv = read(&out.join("heterogeneity.csv"));
    let het: f64 = csv_column(&csv, "log_heterogeneous")[0].parse().unwrap();
    let pooled_ev: f64 = csv_column(&csv, "log_pooled")[0].parse().unwrap();
    let bf: f64 = csv_column(&csv, "log_bayes_factor")[0].parse().unwrap();
    assert!((bf - (het - pooled_ev)).abs() < 1e-9);

    // swapped order: the pooled fit must come first
    let swapped = hsc(&[
        "evidence",
        "--fit", &format!("pooled={}", pooled.display()),
        "--fit", &format!("per={}", per.display()),
        "--heterogeneity", "per,pooled",
        "--out", tmp.path().join("ev2").to_str().unwrap(),
    ]);
    assert_eq!(swapped.status.code(), Some(2));
}

#[test]
fn summarize_emits_summaries_cusum_and_prior_sensitivity() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_cohort(tmp.path(), "19");
    let (tight, loose) = (tmp.path().join("tight"), tmp.path().join("loose"));
    quick_fit(&data, "SCD", "7", &tight, &[]);
    quick_fit(&data, "SCD", "7", &loose, &["--prior", "gamma:2,30"]);

    let out = tmp.path().join("sum");
    run(&[
        "summarize",
        "--fit", &format!("tight={}", tight.display()),
        "--fit", &format!("loose={}", loose.display()),
        "--out", out.to_str().unwrap(),
    ]);

    let summary = read(&out.join("summary.csv"));
    let fits: BTreeSet<String> = csv_column(&summary, "fit").into_iter().collect();
    assert_eq!(fits, BTreeSet::from(["tight".to_string(), "loose".to_string()]));
    let rates: BTreeSet<String> = csv_column(&summary, "rate").into_iter().collect();
    assert_eq!(rates, BTreeSet::from_iter(["lambda", "nu", "mu"].map(String::from)));
    for field in ["mean", "hpd_low", "hpd_high", "ess"] {
        for v in csv_column(&summary, field) {
            assert!(v.parse::<f64>().unwrap().is_finite());
        }
    }

    let cusum = read(&out.join("cusum.csv"));
    let series: BTreeSet<String> = csv_column(&cusum, "series").into_iter().collect();
    assert_eq!(
        series,
        BTreeSet::from_iter(["total_loglik", "lambda", "nu", "mu"].map(String::from))
    );

    assert!(out.join("sensitivity.csv").exists(), "same-model pooled fits get a sensitivity table");
}

#[test]
fn a_simulated_cohort_reloads_with_its_size_and_horizon() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    run(&[
        "simulate",
        "--model", "SCD",
        "--rate", "lambda=0.09",
        "--rate", "nu=0.08",
        "--rate", "mu=0.14",
        "--n-animals", "6",
        "--horizon", "100",
        "--spacing", "fixed:4",
        "--sample-size", "fixed:38",
        "--seed", "20",
        "--out", sim.to_str().unwrap(),
    ]);
    let dataset = read(&sim.join("dataset.csv"));
    let ids: BTreeSet<String> = csv_column(&dataset, "animal_id").into_iter().collect();
    assert_eq!(ids.len(), 6);
    let weeks = csv_column(&dataset, "week");
    assert_eq!(weeks.last().map(String::as_str), Some("100"));

    // the horizon survives reload: assess defaults to the dataset's own span
    let fit = tmp.path().join("fit");
    let fit_out = run(&[
        "fit",
        "--data", sim.join("dataset.csv").to_str().unwrap(),
        "--model", "SCD",
        "--iters", "10",
        "--burnin", "0",
        "--thin", "1",
        "--path-moves", "fixed:5",
        "--seed", "2",
        "--out", fit.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&fit_out.stdout);
    assert!(stdout.contains("to 6 animals"), "stdout was {stdout:?}");

    let assess = tmp.path().join("assess");
    run(&[
        "assess",
        "--data", sim.join("dataset.csv").to_str().unwrap(),
        "--model", "SCD",
        "--rate", "lambda=0.09",
        "--rate", "nu=0.08",
        "--rate", "mu=0.14",
        "--n-virtual", "5",
        "--seed", "3",
        "--out", assess.to_str().unwrap(),
    ]);
    assert!(read(&assess.join("manifest.txt")).contains("horizon=100"));
}
