use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn gje(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gje"));
    cmd.args(args).env_remove("GJE_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn gje")
}

fn run(sub: &str, config: &Path, extra: &[&str]) -> (i32, Value, String) {
    let cfg = config.to_str().unwrap();
    let mut args = vec![sub, "--config", cfg];
    args.extend_from_slice(extra);
    let out = gje(&args, &[]);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    let report = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code().unwrap(), report, stderr)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn validate_bilinear_passes() {
    let path = configs().join("bilinear.toml");
    let (code, r, err) = run("validate", &path, &["--strict"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(r["verdict"]["label"], "PASS");
    for key in ["a0_pass", "a1_pass", "a2_pass", "pass"] {
        assert_eq!(r["result"][key], true, "{key}");
    }
    assert_eq!(r["tool"], "gje");
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["command"], "validate");
    let expected = hex::encode(Sha256::digest(std::fs::read(&path).unwrap()));
    assert_eq!(r["config_hash"], expected);
}

#[test]
fn probe_on_quadratic_fixture_is_strict() {
    let (code, r, err) = run("probe", &configs().join("quadfix.toml"), &["--strict"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(r["verdict"]["label"], "STRICT");
    let h = r["result"]["h_inf"].as_f64().unwrap();
    let lower = r["result"]["implied_h_lower"].as_f64().unwrap();
    // h_sigma along x1 for |x|^2/2 touched at the origin: (1/4 - x1^2)/2 at x1 = 0
    assert!((h - 0.125).abs() < 1e-6, "{h}");
    assert!(lower > 0.0 && lower <= h);
}

#[test]
fn measure_of_kink_fails_only_under_strict() {
    let path = configs().join("kink.toml");
    let (code, r, _) = run("measure", &path, &["--strict"]);
    assert_eq!(code, 1);
    assert_eq!(r["result"]["bounds"]["lower"], "FAIL");
    assert_eq!(r["result"]["bounds"]["upper"], "PASS");
    let (code, r2, _) = run("measure", &path, &[]);
    assert_eq!(code, 0);
    assert_eq!(r, r2);
}

#[test]
fn kink_and_crossing_supports_are_not_c1() {
    for name in ["kink.toml", "semidiscrete.toml"] {
        let (code, r, err) = run("c1", &configs().join(name), &["--strict"]);
        assert_eq!(code, 1, "{name}: {err}");
        assert_eq!(r["verdict"]["label"], "NOT_C1", "{name}");
    }
    let (code, r, _) = run("c1", &configs().join("quadfix.toml"), &["--strict"]);
    assert_eq!(code, 0);
    assert_eq!(r["verdict"]["label"], "C1_PLAUSIBLE");
}

#[test]
fn identical_config_gives_identical_bytes() {
    let path = configs().join("bilinear.toml");
    let cfg = path.to_str().unwrap();
    for sub in ["check-conditions", "validate", "transform"] {
        let a = gje(&[sub, "--config", cfg], &[]);
        let b = gje(&[sub, "--config", cfg], &[("GJE_THREADS", "1")]);
        assert!(a.status.success() && b.status.success(), "{sub}");
        assert_eq!(a.stdout, b.stdout, "{sub}");
    }
}

#[test]
fn seed_is_recorded_and_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(configs().join("bilinear.toml")).unwrap();
    let other = write(dir.path(), "seeded.toml", &base.replace("seed = 0", "seed = 11"));
    let (_, a, _) = run("check-conditions", &configs().join("bilinear.toml"), &[]);
    let (code, b, err) = run("check-conditions", &other, &[]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(b["seed"], 11);
    assert_eq!(b["result"]["seed"], 11);
    assert_ne!(a["config_hash"], b["config_hash"]);
}

#[test]
fn schema_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.toml", "[generating-function]\nfamily = \"bilinear\"\nparms = [1.0]\n");
    let (code, r, err) = run("validate", &p, &[]);
    assert_eq!(code, 2);
    assert!(r.is_null());
    assert!(err.contains("line 3") && err.contains("parms"), "{err}");

    let p = write(dir.path(), "res.toml", "[generating-function]\nfamily = \"bilinear\"\n[validate]\nresolution = 0\n");
    let (code, _, err) = run("validate", &p, &[]);
    assert_eq!(code, 2);
    assert!(err.contains("validate.resolution"), "{err}");

    let p = write(dir.path(), "fam.toml", "[generating-function]\nfamily = \"cubic\"\n");
    let (code, _, err) = run("validate", &p, &[]);
    assert_eq!(code, 2);
    assert!(err.contains("cubic"), "{err}");

    let p = write(dir.path(), "version.toml", "schema = 2\n[generating-function]\nfamily = \"bilinear\"\n");
    assert_eq!(run("validate", &p, &[]).0, 2);
}

#[test]
fn missing_files_and_tables_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "grid.toml",
        "[generating-function]\nfamily = \"bilinear\"\n[potential]\nkind = \"grid-file\"\npath = \"nowhere.json\"\n",
    );
    let (code, _, err) = run("validate", &p, &[]);
    assert_eq!(code, 2);
    assert!(err.contains("nowhere.json"), "{err}");
    let (code, _, err) = run("probe", &configs().join("bilinear.toml"), &[]);
    assert_eq!(code, 2);
    assert!(err.contains("[probe]"), "{err}");
    assert_eq!(run("validate", &dir.path().join("absent.toml"), &[]).0, 2);
}

#[test]
fn bad_thread_cap_is_an_error() {
    let cfg = configs().join("bilinear.toml");
    let out = gje(&["validate", "--config", cfg.to_str().unwrap(), "-q"], &[("GJE_THREADS", "zero")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("GJE_THREADS"));
}

#[test]
fn grid_file_potential_round_trips_through_transform() {
    let dir = tempfile::tempdir().unwrap();
    let axis: Vec<f64> = (0..=16).map(|i| -1.0 + i as f64 / 8.0).collect();
    let values: Vec<f64> = axis.iter().flat_map(|y| axis.iter().map(move |x| 0.5 * (x * x + y * y))).collect();
    let table = serde_json::json!({ "xs": axis, "ys": axis, "values": values });
    write(dir.path(), "u.json", &table.to_string());
    let p = write(
        dir.path(),
        "t.toml",
        "[generating-function]\nfamily = \"bilinear\"\n[potential]\nkind = \"grid-file\"\npath = \"u.json\"\n\
         [transform]\ny-grid = { lo = [-0.5, -0.5], hi = [0.5, 0.5], cells = 4 }\n[output]\ndir = \"out\"\n",
    );
    let (code, r, err) = run("transform", &p, &[]);
    assert_eq!(code, 0, "{err}");
    // the bilinear dual of |x|^2/2 is |y|^2/2, attained on the grid for these y
    let ys = r["result"]["y_grid"]["xs"].as_array().unwrap().clone();
    let vals = r["result"]["transform"]["values"].as_array().unwrap();
    for (k, v) in vals.iter().enumerate() {
        let (y1, y2) = (ys[k % 5].as_f64().unwrap(), ys[k / 5].as_f64().unwrap());
        assert!((v.as_f64().unwrap() - 0.5 * (y1 * y1 + y2 * y2)).abs() < 1e-12, "{k}");
    }
    assert!(dir.path().join("out/transform.json").is_file());
    let csv = std::fs::read_to_string(dir.path().join("out/transform-values.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
}

#[test]
fn probe_and_height_write_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for sub in ["probe", "height", "segment"] {
        let cfg = if sub == "segment" { "bilinear.toml" } else { "quadfix.toml" };
        let (code, _, err) = run(sub, &configs().join(cfg), &["--out", out, "-q"]);
        assert_eq!(code, 0, "{sub}: {err}");
    }
    for f in ["probe.json", "probe-base.csv", "probe-strip.csv", "height-trace.csv", "segment-trace.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let base = std::fs::read_to_string(dir.path().join("probe-base.csv")).unwrap();
    assert_eq!(base.lines().next(), Some("theta,x1,x2,h_sigma"));
    assert_eq!(base.lines().count(), 1 + 129);
}

#[test]
fn json_config_runs_the_suite() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "suite.json",
        r#"{"schema": 1, "suite": {"cells": 24, "fixtures": ["bilinear-quadratic", "bilinear-kink"]}}"#,
    );
    let (code, r, err) = run("suite", &p, &["--strict"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(r["verdict"]["label"], "CONSISTENT");
    let rows = r["result"]["summary"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["probe"], "DEGENERATE");
    let bad = write(dir.path(), "bad.json", r#"{"suite": {"fixtures": ["nope"]}}"#);
    let (code, _, err) = run("suite", &bad, &[]);
    assert_eq!(code, 2);
    assert!(err.contains("nope"), "{err}");
}

#[test]
fn mate_reports_dy_and_contact() {
    let (code, r, err) = run("mate", &configs().join("bilinear.toml"), &[]);
    assert_eq!(code, 0, "{err}");
    assert!(r["verdict"].is_null());
    let entries = r["result"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    // bilinear with u = |x|^2/2: Y = Du = x and DY = I
    assert_eq!(entries[1]["contact"]["y"], serde_json::json!([0.25, -0.5]));
    assert_eq!(entries[1]["det_dy"], 1.0);
    assert!(entries[2]["dy"].is_null());
    assert_eq!(entries[2]["contact"]["y"], serde_json::json!([1.0, -1.0]));
}
