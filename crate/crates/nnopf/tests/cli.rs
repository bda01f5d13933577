use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn case9() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases/case9.json")
}

fn nnopf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnopf"))
        .args(args)
        .arg("--log")
        .arg("warn")
        .output()
        .unwrap()
}

fn small_run(out: &Path) -> Vec<String> {
    [
        "--case",
        case9().to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--n-samples",
        "300",
        "--layers",
        "6,6",
        "--epochs",
        "20",
        "--prune-start",
        "5",
        "--prune-end",
        "15",
        "--prune-steps",
        "2",
        "--prune-target",
        "0.5",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run(cmd: &str, base: &[String], extra: &[&str]) -> Output {
    let mut args = vec![cmd];
    args.extend(base.iter().map(String::as_str));
    args.extend_from_slice(extra);
    nnopf(&args)
}

#[test]
fn missing_case_is_a_usage_error() {
    let out = nnopf(&["gen-data", "--case", "/nonexistent/case.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/case.json"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(nnopf(&["verify", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn invalid_domain_is_a_usage_error() {
    let out = nnopf(&["gen-data", "--case", case9().to_str().unwrap(), "--lower", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_without_a_network_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let base = small_run(dir.path());
    assert!(run("gen-data", &base, &[]).status.success());
    assert_eq!(run("verify", &base, &[]).status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_datasets() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert!(run("gen-data", &small_run(d.path()), &[]).status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("data/inputs.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let cfg = std::fs::read_to_string(a.path().join("data/config.toml")).unwrap();
    assert!(cfg.contains("n_samples = 300"));
}

#[test]
fn full_pipeline_writes_reports_and_honours_the_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let base = small_run(dir.path());
    assert!(run("gen-data", &base, &[]).status.success());
    assert!(run("train", &base, &[]).status.success());
    assert!(dir.path().join("nets/net_seed1.json").exists());
    assert!(dir.path().join("train_summary.csv").exists());

    let out = run("verify", &base, &["--metric", "nu_g,nu_line"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("reports/summary.csv")).unwrap();
    assert!(summary.lines().next().unwrap().starts_with("case,seed,metric"));
    assert!(summary.contains(",mean,nu_g,"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("reports/verify_seed1.json")).unwrap())
            .unwrap();
    assert_eq!(report["reports"][0]["metric"], "nu_g");
    assert!(dir.path().join("bounds/bounds_seed1.json").exists());

    let out = run("verify", &base, &["--metric", "nu_g", "--threshold=-1"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run("sweep", &base, &["--metric", "nu_g", "--deltas", "0,0.1"]);
    assert!(out.status.success());
    let sweep = std::fs::read_to_string(dir.path().join("reports/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);

    let out = run("sweep", &base, &["--metric", "nu_g", "--deltas"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run("export-lp", &base, &[]);
    assert!(out.status.success());
    let lp = std::fs::read_to_string(dir.path().join("lp/dcopf_case9.lp")).unwrap();
    assert!(lp.starts_with("Minimize"));
    let out = run("export-lp", &base, &["--model", "nu_g"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("nu_g_seed1_term0.lp"));
}
