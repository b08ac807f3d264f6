use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rmdim(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rmdim"));
    c.args(args).env_remove("RMDIM_THREADS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn reference(name: &str) -> Value {
    let out = rmdim(&["reference", name], &[]);
    assert!(out.status.success());
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

/// Random expanding maps on a small lattice: ω matters, so every task runs.
fn small_expanding(dir: &Path) -> String {
    let mut v = reference("random_expanding");
    v["cloud"]["m"] = 4096.into();
    v["m_omega"] = 8.into();
    v["n_schedule"] = serde_json::json!([2, 3, 4, 5]);
    write_config(dir, "expanding.json", &v)
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in ["", "tasks"] {
        let d = dir.join(sub);
        for e in fs::read_dir(&d).unwrap() {
            let e = e.unwrap();
            let name = e.file_name().into_string().unwrap();
            if e.file_type().unwrap().is_file() && name != "manifest.json" {
                files.push((format!("{sub}/{name}"), fs::read(e.path()).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn single_rung_ladder_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = reference("identity");
    v["epsilon_ladder"] = serde_json::json!([0.25]);
    let cfg = write_config(dir.path(), "bad.json", &v);
    let out = rmdim(&["estimate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon_ladder"));
    assert!(!dir.path().join("o/manifest.json").exists());
}

#[test]
fn unreadable_config_and_unknown_suite_are_config_errors() {
    let out = rmdim(&["estimate", "--config", "/nonexistent.json", "--out", "/tmp/never"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = rmdim(&["verify", "--suite", "no-such-suite"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn one_and_eight_threads_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_expanding(dir.path());
    for format in ["csv", "json"] {
        let a = dir.path().join(format!("a_{format}"));
        let b = dir.path().join(format!("b_{format}"));
        for (out, t) in [(&a, "1"), (&b, "8")] {
            let o = rmdim(&["--format", format, "estimate", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", t], &[]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        }
        let (fa, fb) = (outputs(&a), outputs(&b));
        assert!(fa.len() > 3);
        assert_eq!(fa, fb, "{format}");
    }
}

#[test]
fn thread_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "id.json", &reference("identity"));
    let threads = |out: &Path| -> Value {
        let m: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
        m["threads"].clone()
    };
    let a = dir.path().join("a");
    let o = rmdim(&["estimate", "--config", &cfg, "--out", a.to_str().unwrap()], &[("RMDIM_THREADS", "3")]);
    assert!(o.status.success());
    assert_eq!(threads(&a), 3);
    let b = dir.path().join("b");
    let o = rmdim(&["estimate", "--config", &cfg, "--out", b.to_str().unwrap(), "--threads", "2"], &[("RMDIM_THREADS", "3")]);
    assert!(o.status.success());
    assert_eq!(threads(&b), 2);
}

#[test]
fn manifest_lists_digests_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_expanding(dir.path());
    let out = dir.path().join("o");
    let o = rmdim(&["estimate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "77"], &[]);
    assert!(o.status.success());
    let m: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"].as_array().unwrap().len(), 16);
    assert!(m["seeds"].as_array().unwrap().iter().all(|s| s["master_seed"] == 77));
    let summary: Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"], m["config_hash"]);
    for f in m["files"].as_array().unwrap() {
        let bytes = fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"], bytes.len());
    }
    // A second run resumes every task.
    let o = rmdim(&["estimate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "77"], &[]);
    assert!(o.status.success());
    let m: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["resumed_tasks"], 16);
}

#[test]
fn verify_passes_and_reports_json() {
    let o = rmdim(&["--format", "json", "verify", "--suite", "cocycle", "--trials", "20"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["violations"].as_array().unwrap().len(), 0);
    assert_eq!(r["cases"], 20);
}

#[test]
fn mmdim_constants_family_returns_mdim() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = reference("torus_shift_mmdim");
    v["mmdim"]["family"] = serde_json::json!({
        "basis": [{ "kind": "constant", "c": 1.0 }],
        "lower": [-1.0],
        "upper": [1.0],
    });
    v["mmdim"]["search"]["budget"] = 12.into();
    v["mmdim"]["m_samples"] = 50.into();
    let cfg = write_config(dir.path(), "mm.json", &v);
    let out = dir.path().join("o");
    let o = rmdim(&["mmdim", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    let gap = s["result"]["achieved_gap"].as_f64().unwrap();
    assert!(gap.abs() < 1e-9, "{gap}");
    assert!(out.join("mmdim_trace.csv").exists());
}
