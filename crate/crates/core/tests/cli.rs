use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn peduncle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peduncle")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn simulate(dir: &Path, n: &str, extra_config: &str) -> std::path::PathBuf {
    let config = dir.join("sim.json");
    fs::write(&config, format!("{{ \"noise_sigma\": 0.1 {extra_config} }}")).unwrap();
    let corpus = dir.join("corpus");
    let out = peduncle(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--n",
        n,
        "--failure-fraction",
        "0.25",
        "--seed",
        "7",
        "--out",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    corpus
}

#[test]
fn simulate_batch_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = simulate(dir.path(), "8", "");
    let manifest = fs::read_to_string(corpus.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"));

    let report = dir.path().join("report.json");
    let out = peduncle(&["batch", "--corpus", corpus.to_str().unwrap(), "--jobs", "2", "--report", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("report.timing.json").exists());

    for kind in ["error_vs_mse", "runtime_hist", "joint_locations"] {
        let csv = dir.path().join(format!("{kind}.csv"));
        let out = peduncle(&["report", "--in", report.to_str().unwrap(), "--plot-data", kind, "--out", csv.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{kind}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 9);
    }

    let out = peduncle(&["report", "--in", report.to_str().unwrap(), "--plot-data", "pie", "--out", "x.csv"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn fit_prints_json_and_uses_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = simulate(dir.path(), "2", "");
    let trial = corpus.join("trial-0000.json");
    let out = peduncle(&["fit", "--trial", trial.to_str().unwrap(), "--trace"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["converged"], true);
    assert_eq!(json["bias_compensation"], true);
    assert!(json["trace"].as_array().is_some_and(|t| !t.is_empty()));

    let out = peduncle(&["fit", "--trial", trial.to_str().unwrap(), "--no-bias-compensation"]);
    assert_eq!(code(&out), 0);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["bias_compensation"], false);
    assert!(json.get("trace").is_none());

    let capped = dir.path().join("capped.json");
    fs::write(&capped, r#"{ "max_iterations_per_run": 1, "max_restarts": 0 }"#).unwrap();
    let out = peduncle(&["fit", "--trial", trial.to_str().unwrap(), "--solver-config", capped.to_str().unwrap()]);
    assert_eq!(code(&out), 2);

    let bad_config = dir.path().join("bad.json");
    fs::write(&bad_config, r#"{ "max_iterations": 1 }"#).unwrap();
    let out = peduncle(&["fit", "--trial", trial.to_str().unwrap(), "--solver-config", bad_config.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn input_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&peduncle(&["fit", "--trial", missing.to_str().unwrap()])), 3);

    let malformed = dir.path().join("bad.json");
    fs::write(&malformed, "{\"schema_version\": 1, \"id\": 3}").unwrap();
    let out = peduncle(&["fit", "--trial", malformed.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let report = dir.path().join("r.json");
    let out = peduncle(&["batch", "--corpus", empty.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));

    let nowhere = dir.path().join("nowhere");
    let out = peduncle(&["batch", "--corpus", nowhere.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
}
