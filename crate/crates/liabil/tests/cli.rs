//! End-to-end checks of the `liabil` binary: exit codes, output files,
//! and byte-identical reruns under a fixed seed.

use std::path::Path;
use std::process::Command;

fn liabil() -> Command {
    Command::new(env!("CARGO_BIN_EXE_liabil"))
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let out = liabil().arg("fit").output().unwrap();
    assert_eq!(out.status.code(), Some(1), "missing --tau/--data must exit 1");

    let out = liabil().args(["nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = liabil().args(["--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn simulate_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = liabil()
            .args(["simulate", "--n-mz", "300", "--n-dz", "300", "--seed", "7", "--out"])
            .arg(path)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(read(&a), read(&b), "same seed must reproduce the file byte for byte");
    assert!(a.with_extension("config.json").exists());

    // Different seed, different bytes.
    let c = dir.path().join("c.csv");
    liabil()
        .args(["simulate", "--n-mz", "300", "--n-dz", "300", "--seed", "8", "--out"])
        .arg(&c)
        .output()
        .unwrap();
    assert_ne!(read(&a), read(&c));
}

#[test]
fn fit_pipeline_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    liabil()
        .args(["simulate", "--n-mz", "1500", "--n-dz", "1500", "--seed", "11", "--out"])
        .arg(&cohort)
        .output()
        .unwrap();

    let fit_dir = dir.path().join("fit");
    let out = liabil()
        .args(["fit", "--tau", "110", "--model", "biprobit", "--censoring", "weibull", "--data"])
        .arg(&cohort)
        .arg("--out")
        .arg(&fit_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["fit.json", "measures.csv", "config.json", "censoring.json"] {
        assert!(fit_dir.join(file).exists(), "missing {file}");
    }
    let report: serde_json::Value = serde_json::from_str(&read(fit_dir.join("fit.json"))).unwrap();
    assert_eq!(report["converged"], serde_json::json!(true));
    assert!(report["tests"]["genetic_effect"]["p_value"].is_number());
    assert!(report["tests"]["marginal_homogeneity"]["p_value"].is_number());
    assert!(report["vcov_if3"].is_array(), "weibull censoring carries the two-stage vcov");
    let header = read(fit_dir.join("measures.csv"));
    assert!(header.starts_with("tau,estimate,lower,upper,quantity,zygosity"));

    // Polygenic fit on the same data reports the decomposition.
    let ace_dir = dir.path().join("ace");
    let out = liabil()
        .args(["fit", "--tau", "110", "--model", "ace", "--censoring", "km", "--data"])
        .arg(&cohort)
        .arg("--out")
        .arg(&ace_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(ace_dir.join("fit.json"))).unwrap();
    assert!(report["polygenic"]["h2"]["estimate"].is_number());
    assert!(report["vcov_if3"].is_null(), "KM weights carry no two-stage vcov");
}

#[test]
fn fit_rejects_unknown_model_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    liabil()
        .args(["simulate", "--n-mz", "50", "--n-dz", "50", "--seed", "3", "--out"])
        .arg(&cohort)
        .output()
        .unwrap();
    let out = liabil()
        .args(["fit", "--tau", "110", "--model", "acde", "--data"])
        .arg(&cohort)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("identi"), "{err}");

    let out = liabil()
        .args(["fit", "--tau", "110", "--data", "/nonexistent.csv", "--out"])
        .arg(dir.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn timegrid_emits_expected_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    liabil()
        .args(["simulate", "--n-mz", "4000", "--n-dz", "4000", "--seed", "5", "--out"])
        .arg(&cohort)
        .output()
        .unwrap();
    let grid_dir = dir.path().join("grid");
    let out = liabil()
        .args(["timegrid", "--taus", "80:100:10", "--censoring", "km", "--data"])
        .arg(&cohort)
        .arg("--out")
        .arg(&grid_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let curves = read(grid_dir.join("curves.csv"));
    for tau in ["80", "90", "100"] {
        assert!(curves.lines().any(|l| l.starts_with(&format!("{tau},"))), "missing tau {tau}");
    }
    assert!(curves.contains("h2_ace"));
    assert!(grid_dir.join("grid_report.json").exists());
}

#[test]
fn replicate_writes_summary_with_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let rep_dir = dir.path().join("rep");
    let out = liabil()
        .args([
            "replicate",
            "--design",
            "table1-row1",
            "--reps",
            "4",
            "--n-mz",
            "400",
            "--n-dz",
            "400",
            "--seed",
            "9",
            "--estimators",
            "naive,weibull1",
            "--out",
        ])
        .arg(&rep_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read(rep_dir.join("summary.csv"));
    assert!(summary.starts_with("arm,estimand,true,av,cv,mse_x100,n_ok"));
    assert!(summary.contains("naive,f1"));
    assert!(summary.contains("weibull1,sigma_a2"));
    assert!(rep_dir.join("summary.json").exists());

    // Identical invocation reproduces the summary byte for byte.
    let rep2 = dir.path().join("rep2");
    liabil()
        .args([
            "replicate",
            "--design",
            "table1-row1",
            "--reps",
            "4",
            "--n-mz",
            "400",
            "--n-dz",
            "400",
            "--seed",
            "9",
            "--estimators",
            "naive,weibull1",
            "--out",
        ])
        .arg(&rep2)
        .output()
        .unwrap();
    assert_eq!(summary, read(rep2.join("summary.csv")));
}

#[test]
fn censoring_command_serializes_model() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    liabil()
        .args(["simulate", "--n-mz", "500", "--n-dz", "500", "--seed", "13", "--out"])
        .arg(&cohort)
        .output()
        .unwrap();
    let cens_dir = dir.path().join("cens");
    let out = liabil()
        .args(["censoring", "--kind", "weibull", "--data"])
        .arg(&cohort)
        .arg("--out")
        .arg(&cens_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let model: serde_json::Value =
        serde_json::from_str(&read(cens_dir.join("censoring.json"))).unwrap();
    assert_eq!(model["kind"], "weibull_ph");
    let gamma = model["gamma"].as_array().unwrap();
    assert_eq!(gamma.len(), 2);
    // log lambda near the generator's -4.5 at this sample size.
    assert!((gamma[0].as_f64().unwrap() + 4.5).abs() < 0.3);

    let km_dir = dir.path().join("km");
    let out = liabil()
        .args(["censoring", "--kind", "km-zygosity", "--data"])
        .arg(&cohort)
        .arg("--out")
        .arg(&km_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let model: serde_json::Value =
        serde_json::from_str(&read(km_dir.join("censoring.json"))).unwrap();
    assert_eq!(model["kind"], "kaplan_meier");
    assert_eq!(model["labels"], serde_json::json!(["MZ", "DZ"]));
}

#[test]
fn covariate_scenario_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    let out = liabil()
        .args([
            "simulate",
            "--covariate-scenario",
            "--n-mz",
            "1500",
            "--n-dz",
            "1500",
            "--seed",
            "21",
            "--out",
        ])
        .arg(&cohort)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let head: String = read(&cohort).lines().next().unwrap().to_string();
    assert_eq!(head, "pair_id,member,zygosity,time,status,x");

    let fit_dir = dir.path().join("fit");
    let out = liabil()
        .args([
            "fit",
            "--tau",
            "110",
            "--model",
            "biprobit",
            "--censoring",
            "weibull",
            "--z-cols",
            "x",
            "--data",
        ])
        .arg(&cohort)
        .arg("--out")
        .arg(&fit_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(fit_dir.join("fit.json"))).unwrap();
    assert_eq!(report["converged"], serde_json::json!(true));
    let cens: serde_json::Value =
        serde_json::from_str(&read(fit_dir.join("censoring.json"))).unwrap();
    assert_eq!(cens["gamma"].as_array().unwrap().len(), 3, "z covariate fitted");
}
