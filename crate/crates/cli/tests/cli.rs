use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn helipatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_helipatch"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env("HELIPATCH_THREADS", "1")
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_helipatch")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn infeasible_mass_is_reported_before_anything_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = helipatch(&dir, &["patch", "--d", "4", "--eps", "0.95"]);
    assert_eq!(out.status.code(), Some(1));
    let line = String::from_utf8_lossy(&out.stderr);
    let rec: Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(rec["error"], "InfeasibleMass");
    assert!(!dir.exists());
}

#[test]
fn bad_dt_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = helipatch(tmp.path(), &["evolve", "--eps", "0.2", "--dt", "soon"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mesh_writes_both_tables_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = helipatch(tmp.path(), &["mesh", "--h", "0.125"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let nodes = fs::read_to_string(tmp.path().join("nodes.csv")).unwrap();
    assert!(nodes.starts_with("id,x,y,boundary"));
    let m = json(&tmp.path().join("manifest.json"));
    assert_eq!(m["command"], "mesh");
}

#[test]
fn sweep_output_feeds_evolve_and_lift() {
    let tmp = tempfile::tempdir().unwrap();
    let out = helipatch(tmp.path(), &["sweep", "--eps-list", "0.3,0.2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    let saved = tmp.path().join("patch_eps_0.2.json");
    assert!(saved.exists());

    let evo = tmp.path().join("evolve");
    let out = helipatch(&evo, &["evolve", "--from", saved.to_str().unwrap(), "--periods", "0.05"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let monitors = fs::read_to_string(evo.join("monitors.csv")).unwrap();
    assert!(monitors.starts_with("t,E,I,mass"));
    assert!(monitors.lines().count() > 2);

    let lift = tmp.path().join("lift");
    let out = helipatch(&lift, &["lift", "--from", saved.to_str().unwrap(), "--levels", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(lift.join("tube.csv").exists());
    assert!(lift.join("lift.json").exists());
}

#[test]
fn patch_round_trips_through_its_saved_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = helipatch(tmp.path(), &["patch", "--eps", "0.3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let diag = tmp.path().join("patch_diag.json");
    let saved = json(&diag);
    assert_eq!(saved["converged"], true);
    let levels = 2;
    let lift = tmp.path().join("lift");
    let out = helipatch(&lift, &["lift", "--from", diag.to_str().unwrap(), "--levels", &levels.to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // the reloaded patch carries circulation d at every level
    let l = json(&lift.join("lift.json"));
    let circ = l["circulation"].as_array().unwrap();
    assert_eq!(circ.len(), levels);
    assert!(circ.iter().all(|c| (c.as_f64().unwrap() - 1.0).abs() < 1e-12));
    assert_eq!(l["patch_diameter"], saved["diagnostics"]["diameter"]);
    let omega = fs::read_to_string(tmp.path().join("patch_omega.csv")).unwrap();
    assert_eq!(omega.lines().count() - 1, saved["omega"].as_array().unwrap().len());
}

#[test]
fn config_file_is_overlaid_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "h = 0.25\nrstar = 0.4\n").unwrap();
    let out = helipatch(&tmp.path().join("a"), &["--config", cfg.to_str().unwrap(), "mesh"]);
    assert_eq!(out.status.code(), Some(1), "h = 0.25 is too coarse");
    let out = helipatch(&tmp.path().join("b"), &["--config", cfg.to_str().unwrap(), "mesh", "--h", "0.125"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(&cfg, "bogus = 1\n").unwrap();
    let out = helipatch(&tmp.path().join("c"), &["--config", cfg.to_str().unwrap(), "mesh"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = helipatch(tmp.path(), &["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&tmp.path().join("verify.json"));
    assert!(v.as_array().unwrap().iter().all(|c| c["pass"] == true));
}
