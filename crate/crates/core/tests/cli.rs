//! End-to-end runs of the `osgoodlab` binary on the sample configs.

use std::path::{Path, PathBuf};
use std::process::Command;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_osgoodlab"))
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn shrink(name: &str, edit: impl FnOnce(&mut serde_json::Value), dir: &Path) -> PathBuf {
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(configs().join(name)).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join(name);
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn osgood_check_and_construct_h() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "osgood-check",
        &configs().join("osgood_check.json"),
        dir.path(),
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        String::from_utf8_lossy(&o.stdout).trim(),
        "\"diverges-within-horizon\""
    );
    let csv = std::fs::read_to_string(dir.path().join("partial_sums.csv")).unwrap();
    assert_eq!(csv.lines().count(), 65);
    let o = run(
        "construct-h",
        &configs().join("construct_h.json"),
        dir.path(),
        &[],
    );
    assert!(o.status.success());
    assert!(dir.path().join("breakpoints.csv").exists());
}

#[test]
fn simulate_and_moments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shrink(
        "simulate.json",
        |v| v["solver"]["t_end"] = 0.05.into(),
        dir.path(),
    );
    let o = run("simulate", &cfg, &dir.path().join("sim"), &["--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sim/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["seed"], 9);
    let cfg = shrink(
        "moments.json",
        |v| {
            v["experiment"]["samples"] = 100.into();
            v["experiment"]["epsilons"] = serde_json::json!([0.0009765625, 0.001953125]);
            v["experiment"]["operator"]["modes"] = 16.into();
        },
        dir.path(),
    );
    let o = run(
        "moments",
        &cfg,
        &dir.path().join("mom"),
        &["--threads", "2"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("mom/moments.csv")).unwrap();
    assert!(csv.starts_with("epsilon,estimate,stderr\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn ensemble_outputs_and_thread_independence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shrink(
        "ensemble.json",
        |v| {
            v["trajectories"] = 8.into();
            v["solver"]["t_end"] = 0.1.into();
            v["solver"]["operator"]["modes"] = 16.into();
        },
        dir.path(),
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run("ensemble", &cfg, &a, &["--threads", "1"])
        .status
        .success());
    assert!(run("ensemble", &cfg, &b, &["--threads", "3"])
        .status
        .success());
    for f in ["summary.json", "gaps.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(a.join("trajectories/7.csv").exists());
    let header = std::fs::read_to_string(a.join("gaps.csv")).unwrap();
    assert!(header.starts_with("n,a_n,violations,total,freq,ci_lo,ci_hi\n"));
    // A different seed changes the manifest hash.
    let c = dir.path().join("c");
    assert!(run("ensemble", &cfg, &c, &["--seed", "99"])
        .status
        .success());
    assert_ne!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(c.join("manifest.json")).unwrap()
    );
}

#[test]
fn schema_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shrink(
        "ensemble.json",
        |v| v["solver"]["dtt"] = 0.1.into(),
        dir.path(),
    );
    let o = run("ensemble", &cfg, dir.path(), &[]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dtt") && err.contains("solver"), "{err}");
    let cfg = shrink(
        "ensemble.json",
        |v| v["trajectories"] = "many".into(),
        dir.path(),
    );
    let err = String::from_utf8_lossy(&run("ensemble", &cfg, dir.path(), &[]).stderr).to_string();
    assert!(
        err.contains("trajectories") && err.contains("invalid type"),
        "{err}"
    );
}
