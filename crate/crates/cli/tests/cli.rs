//! Runs the `covnn` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn covnn(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_covnn"));
    c.current_dir(dir).args(args).env_remove("COVNN_THREADS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    serde_json::from_str(stderr.trim()).unwrap()
}

const SMALL: &str =
    "[synth.design]\nregions = 16\nn_train = 160\nn_test_healthy = 40\nn_test_disease = 40\n[train]\nepochs = 15\n";

#[test]
fn train_then_predict_on_training_cohort_is_bias_free() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(covnn(d, &["synth", "--seed", "3", "--out", "data"], &[]).status.success());
    let out = covnn(d, &["train", "--seed", "3", "--out", "model", "--train-csv", "data/train.csv"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let predict = |input: &str, stem: &str| {
        covnn(
            d,
            &[
                "predict",
                "--out",
                "pred",
                "--model",
                "model/model.json",
                "--covariance",
                "model/covariance.json",
                "--bias",
                "model/bias.json",
                "--input",
                input,
                "--stem",
                stem,
            ],
            &[],
        )
    };
    assert!(predict("data/train.csv", "train").status.success());
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("pred/train.json")).unwrap()).unwrap();
    let deltas: Vec<f64> =
        report["subjects"].as_array().unwrap().iter().map(|s| s["delta_age"].as_f64().unwrap()).collect();
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    assert!(mean.abs() < 0.5, "mean delta {mean}");

    assert!(predict("data/test.csv", "test").status.success());
    let gs = covnn(d, &["group-stats", "--out", "stats", "--report", "pred/test.json"], &[]);
    assert!(gs.status.success(), "{}", String::from_utf8_lossy(&gs.stderr));
    let csv = fs::read_to_string(d.join("stats/group_stats.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 50);
}

#[test]
fn dimension_mismatch_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("small.toml"), SMALL).unwrap();
    fs::write(d.join("other.toml"), SMALL.replace("regions = 16", "regions = 12")).unwrap();
    assert!(covnn(d, &["synth", "--config", "small.toml", "--out", "a"], &[]).status.success());
    assert!(covnn(d, &["synth", "--config", "other.toml", "--out", "b"], &[]).status.success());
    assert!(covnn(d, &["train", "--config", "small.toml", "--out", "m", "--train-csv", "a/train.csv"], &[])
        .status
        .success());
    let out = covnn(
        d,
        &[
            "predict",
            "--out",
            "p",
            "--model",
            "m/model.json",
            "--covariance",
            "m/covariance.json",
            "--bias",
            "m/bias.json",
            "--input",
            "b/test.csv",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"], "DimensionError");
    assert!(!d.join("p/delta_age.json").exists());
}

#[test]
fn bad_inputs_give_one_line_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "seed = \"x\"\n").unwrap();
    let out = covnn(d, &["synth", "--config", "bad.toml"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "ConfigParseError");

    let out = covnn(d, &["train", "--train-csv", "missing.csv"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "ConfigError");

    let out = covnn(d, &["synth"], &[("COVNN_THREADS", "zero")]);
    assert_eq!(out.status.code(), Some(2));

    let out = covnn(d, &["frobnicate"], &[]);
    assert_eq!(out.status.code(), Some(2));
    error_line(&out);

    fs::write(d.join("empty.csv"), "subject_id,age,group,r_a\n").unwrap();
    let out = covnn(d, &["train", "--train-csv", "empty.csv"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "InsufficientSamples");
}

#[test]
fn demo_output_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("small.toml"), SMALL).unwrap();
    for (out, threads) in [("one", "1"), ("four", "4")] {
        let o =
            covnn(d, &["demo", "--config", "small.toml", "--seed", "8", "--out", out], &[("COVNN_THREADS", threads)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names: Vec<_> = fs::read_dir(d.join("one")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(names.len() >= 10);
    for n in names {
        let same = fs::read(d.join("one").join(&n)).unwrap() == fs::read(d.join("four").join(&n)).unwrap();
        assert!(same, "{n:?} differs");
    }
}

#[test]
fn transfer_and_stability_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = "[train]\nepochs = 5\n[transfer]\ndims = [12, 24]\ntrain_dims = [12]\nn_train = 80\nn_test = 20\nn_matched = 4\n\
               [stability]\nregions = 8\nns = [50, 200]\ntrials = 3\ncontrast_regions = 8\ncontrast_subjects = 100\n\
               contrast_cohorts = 2\n[stability.contrast]\nrank = 2\nkeep_fractions = [0.8]\nresamples = 3\nfilter_taps = 3\n";
    fs::write(d.join("c.toml"), cfg).unwrap();
    assert!(covnn(d, &["transfer", "--config", "c.toml", "--out", "t"], &[]).status.success());
    let mae = fs::read_to_string(d.join("t/transfer_mae.csv")).unwrap();
    assert_eq!(mae.lines().count(), 3);
    assert!(covnn(d, &["stability", "--config", "c.toml", "--out", "s"], &[]).status.success());
    let tidy = fs::read_to_string(d.join("s/stability.csv")).unwrap();
    assert!(tidy.starts_with("experiment,n,trial,metric,value\n"));
    for e in ["filter_stability", "vnn_stability", "pca_contrast_near_degenerate", "pca_contrast_separated"] {
        assert!(tidy.lines().any(|l| l.starts_with(e)), "{e}");
    }
}
