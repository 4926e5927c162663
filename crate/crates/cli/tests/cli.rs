use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn polarlink(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polarlink"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

fn summary(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn fringe_writes_the_documented_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = polarlink(&["fringe", "--seed", "3"], &configs().join("fringe.toml"), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = read_dir_sorted(tmp.path()).into_iter().map(|f| f.0).collect();
    for f in [
        "chsh.json",
        "chsh_corrected.json",
        "fringe.csv",
        "fringe_sessions.csv",
        "resolved_config.toml",
        "sessions.csv",
        "summary.json",
        "timeline.csv",
    ] {
        assert!(names.iter().any(|n| n == f), "missing {f}");
    }
    let csv = fs::read_to_string(tmp.path().join("fringe.csv")).unwrap();
    assert!(csv.starts_with("nist_basis_deg,umd_angle_deg,counts,duration_s,post_timeout_flag\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 19);

    let chsh: Value = serde_json::from_slice(&fs::read(tmp.path().join("chsh.json")).unwrap()).unwrap();
    for key in ["S", "sigma_S", "visibilities", "corrected"] {
        assert!(chsh.get(key).is_some(), "chsh.json lacks {key}");
    }
    let s = summary(tmp.path());
    assert_eq!(s["scenario"], "fringe");
    assert_eq!(s["seed"], 3);
    assert_eq!(s["config"]["source"]["visibility"], 0.8);
}

#[test]
fn same_seed_gives_identical_bytes_and_other_seeds_differ() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("probe.toml");
    let run = |seed: &str, dir: &str| {
        let d = tmp.path().join(dir);
        assert!(polarlink(&["probe", "--seed", seed], &cfg, &d).status.success());
        read_dir_sorted(&d)
    };
    let a = run("5", "a");
    assert_eq!(a, run("5", "b"));
    assert_ne!(a, run("6", "c"));
}

#[test]
fn seed_fan_out_matches_single_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("fringe.toml");
    let fan = tmp.path().join("fan");
    let out = polarlink(&["fringe", "--seed", "20", "--seeds", "3"], &cfg, &fan);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for s in 20..23 {
        let single = tmp.path().join(format!("single{s}"));
        assert!(polarlink(&["fringe", "--seed", &s.to_string()], &cfg, &single).status.success());
        assert_eq!(read_dir_sorted(&fan.join(format!("seed_{s}"))), read_dir_sorted(&single));
    }
    let agg: Value = serde_json::from_slice(&fs::read(fan.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(agg["seeds"], serde_json::json!([20, 21, 22]));
    assert_eq!(agg["stats"]["chsh.S"]["n"], 3);
    let mean = agg["stats"]["chsh.S"]["mean"].as_f64().unwrap();
    assert!(mean > 2.0 && mean < 2.83);
}

#[test]
fn summary_and_resolved_config_reproduce_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    assert!(polarlink(&["probe", "--seed", "8"], &configs().join("probe.toml"), &first).status.success());
    for (name, source) in [("toml", "resolved_config.toml"), ("json", "summary.json")] {
        let again = tmp.path().join(name);
        let out = polarlink(&["probe", "--seed", "8"], &first.join(source), &again);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(read_dir_sorted(&first), read_dir_sorted(&again), "rerun from {source}");
    }
}

#[test]
fn zero_duration_runs_cleanly_with_empty_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "duration_s = 0.0\n");
    for scenario in ["probe", "longrun"] {
        let dir = tmp.path().join(scenario);
        let out = polarlink(&[scenario, "--seed", "1"], &cfg, &dir);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let table = if scenario == "probe" { "probe.csv" } else { "series.csv" };
        assert_eq!(fs::read_to_string(dir.join(table)).unwrap().lines().count(), 1);
    }
    let s = summary(&tmp.path().join("longrun"));
    assert_eq!(s["results"]["sessions"], 0);
    assert!(s["results"]["uptime_fraction"].is_null());
}

#[test]
fn config_errors_exit_with_2_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("[apc]\nstep_siz = 2.0\n", "apc.step_siz"),
        ("[source]\nvisibility = 1.5\n", "source.visibility"),
        ("duration_s = -1.0\n", "duration_s"),
        ("[fringe]\nbases_deg = [0.0, 45.0]\n", "fringe.bases_deg"),
        ("seed = \"x\"\n", "seed"),
    ];
    for (text, path) in cases {
        let cfg = write_config(tmp.path(), text);
        let out = polarlink(&["probe", "--seed", "1"], &cfg, &tmp.path().join("o"));
        assert_eq!(out.status.code(), Some(2), "{text}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(&format!("`{path}`")), "{text}: {err}");
    }
    let out = polarlink(&["probe", "--seed", "1"], &tmp.path().join("missing.toml"), &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(tmp.path(), "");
    let out = polarlink(&["warp", "--seed", "1"], &cfg, &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_and_calibration_failures_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[source]\npair_rate = 1e-9\n[channel]\ndrift = \"static\"\n");
    let out = polarlink(&["fringe", "--seed", "1"], &cfg, &tmp.path().join("f"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = write_config(tmp.path(), "[calibration]\nmax_iterations = 1\ntolerance = 1e-9\n");
    let out = polarlink(&["calibrate", "--seed", "1"], &cfg, &tmp.path().join("c"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
