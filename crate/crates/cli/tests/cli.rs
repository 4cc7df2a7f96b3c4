use std::path::Path;
use std::process::Command;

fn dgfit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dgfit"))
}

fn preset(name: &str) -> String {
    let out = dgfit().args(["preset", name]).output().unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    dgfit()
        .arg("run")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, preset("case1") + "\n[extra]\nfoo = 1\n").unwrap();
    let out = run(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn unknown_scenario_is_a_config_error() {
    let out = dgfit().args(["preset", "case9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn case1_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, preset("case1")).unwrap();
    let args = ["--levels", "2", "--until", "0.03"];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&cfg, &a, &args).status.success());
    assert!(run(&cfg, &b, &args).status.success());
    let la = std::fs::read_to_string(a.join("estimator.csv")).unwrap();
    assert_eq!(la, std::fs::read_to_string(b.join("estimator.csv")).unwrap());
    let rows: Vec<&str> = la.lines().skip(2).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let exponent: f64 = r.split(',').nth(13).unwrap().parse().unwrap();
        assert_eq!(exponent, 0.0);
    }
}

#[test]
fn snapshots_follow_naming() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let text = preset("case2").replace("vtk_every = 0", "vtk_every = 1");
    assert!(text.contains("vtk_every = 1"));
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("o");
    assert!(run(&cfg, &out, &["--levels", "2", "--until", "0.02"]).status.success());
    for s in 0..=2 {
        let p = out.join(format!("snap_{s:06}.vtu"));
        let body = std::fs::read_to_string(&p).unwrap();
        assert!(body.contains("<VTKFile type=\"UnstructuredGrid\""));
        assert!(body.contains("Name=\"omega\""));
    }
}

#[test]
fn scenario_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, preset("case1")).unwrap();
    let out = dir.path().join("o");
    let r = run(&cfg, &out, &["--scenario", "case3", "--levels", "2", "--until", "0.01"]);
    assert!(r.status.success());
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("scenario = \"case3\""));
}
