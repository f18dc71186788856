use std::path::Path;
use std::process::{Command, Output};

fn gmpc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmpc"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn error_line(o: &Output) -> String {
    let err = String::from_utf8_lossy(&o.stderr).into_owned();
    assert_eq!(err.lines().count(), 1, "stderr: {err}");
    err.trim_end().to_string()
}

#[test]
fn missing_stage_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmpc(dir.path(), &["train"]);
    assert!(!o.status.success());
    let line = error_line(&o);
    assert!(line.starts_with("error kind=config message=\""), "{line}");
    assert!(line.contains("generate-data"), "{line}");
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"mpc": {"p": 1.5}}"#).unwrap();
    let o = gmpc(dir.path(), &["baseline", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_line(&o).starts_with("error kind=config"));

    std::fs::write(&cfg, r#"{"mpc": {"nope": 1}}"#).unwrap();
    let o = gmpc(dir.path(), &["baseline", "--config", cfg.to_str().unwrap()]);
    assert!(error_line(&o).contains("unknown field"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmpc(dir.path(), &["fly"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_line(&o).starts_with("error kind=usage"));
}

#[test]
fn evaluate_without_report_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmpc(dir.path(), &["evaluate"]);
    assert!(!o.status.success());
    assert!(error_line(&o).contains("run-closed-loop"));
}
