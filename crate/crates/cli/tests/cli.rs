use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_orlicz-minkowski"))
}

fn write_config(dir: &Path, name: &str, json: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

fn run(args: &[&std::ffi::OsStr]) -> Output {
    bin().args(args).output().unwrap()
}

const MINIMAL: &str = r#"{"dim": 2, "resolution": 64, "p": -1, "density": {"kind": "constant"}}"#;

#[test]
fn minimal_config_recovers_ball_multiplier() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    let out = tmp.path().join("out");
    let o = run(&["solve".as_ref(), cfg.as_os_str(), "--out".as_ref(), out.as_os_str(), "--quiet".as_ref()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    let lambda = v["lambda"].as_f64().unwrap();
    assert!((lambda / std::f64::consts::PI.powf(1.5) - 1.0).abs() < 0.05);
    assert!(v["certificate"]["residual_plain"].as_f64().unwrap() < 1e-3);
    for f in ["certificate.json", "body.csv", "trace_stage_0.csv", "trace_stage_5.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let trace = fs::read_to_string(out.join("trace_stage_0.csv")).unwrap();
    assert!(trace.starts_with("iter,energy,el_residual,lambda,step,rmin,rmax\n"));
}

#[test]
fn exponent_out_of_range_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"dim": 2, "resolution": 64, "p": -3, "density": {"kind": "constant"}}"#);
    let o = run(&["solve".as_ref(), cfg.as_os_str(), "--out".as_ref(), tmp.path().as_os_str()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`p`") && err.contains("out of (-n, 0)"), "{err}");
}

#[test]
fn malformed_fields_are_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"dim": 2, "resolution": 64, "p": -1, "density": {"kind": "constant"}, "schedules": {"eps": "fast"}}"#,
    );
    let o = run(&["solve".as_ref(), cfg.as_os_str(), "--out".as_ref(), tmp.path().as_os_str()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schedules.eps"));
    let o = run(&["solve".as_ref(), tmp.path().join("missing.json").as_os_str()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_only_reproduces_certificate_and_runs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"dim": 2, "resolution": 48, "p": -1, "density": {"kind": "random", "low": 0.7, "high": 1.3}, "seed": 11,
            "schedules": {"eps": [0.1, 0.01, 0.001]}}"#,
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = run(&["solve".as_ref(), cfg.as_os_str(), "--out".as_ref(), dir.as_os_str(), "--quiet".as_ref()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let sa = fs::read(a.join("solution.json")).unwrap();
    assert_eq!(sa, fs::read(b.join("solution.json")).unwrap());

    let stored = fs::read_to_string(a.join("certificate.json")).unwrap();
    let v = tmp.path().join("v");
    let o = run(&[
        "verify-only".as_ref(),
        a.join("solution.json").as_os_str(),
        cfg.as_os_str(),
        "--out".as_ref(),
        v.as_os_str(),
        "--quiet".as_ref(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stored, fs::read_to_string(v.join("certificate.json")).unwrap());
}

#[test]
fn partial_convergence_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"dim": 2, "resolution": 64, "p": -1, "density": {"kind": "harmonic", "a": 0.5, "k": 3},
            "solver": {"max_iterations": 1}, "schedules": {"eps": [0.01]}}"#,
    );
    let o = run(&["solve".as_ref(), cfg.as_os_str(), "--out".as_ref(), tmp.path().as_os_str(), "--quiet".as_ref()]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(v["converged"], false);
    assert_eq!(v["failed_stage"], 0);
}

#[test]
fn kernel_dump_and_spatial_mesh() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"dim": 3, "resolution": 162, "p": -2, "density": {"kind": "expression", "expr": "1 + 0.3 * z^2"},
            "schedules": {"eps": [0.1, 0.01]}}"#,
    );
    let o = run(&["kernel-dump".as_ref(), cfg.as_os_str(), "--out".as_ref(), tmp.path().as_os_str(), "--quiet".as_ref()]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(tmp.path().join("kernel.csv")).unwrap();
    assert!(csv.starts_with("t,psi,psi_eps,Psi,Psi_eps\n"));
    assert_eq!(csv.lines().count(), 401);

    let o = run(&["solve".as_ref(), cfg.as_os_str(), "--out".as_ref(), tmp.path().as_os_str(), "--quiet".as_ref()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let off = fs::read_to_string(tmp.path().join("body.off")).unwrap();
    assert!(off.starts_with("OFF"));
}
