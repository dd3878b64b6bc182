use std::path::{Path, PathBuf};
use std::process::Output;

use relsp_cli::config::InitialState;
use relsp_cli::RunConfig;
use tempfile::TempDir;

fn small_config() -> RunConfig {
    let mut c = RunConfig::desk(1.0);
    c.domain.modes = vec![32];
    c.evolution.dt = 2e-2;
    c.evolution.t_end = 1.0;
    c.evolution.record_every = 5;
    c
}

fn write_config(dir: &Path, name: &str, config: &RunConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, config.to_json()).unwrap();
    path
}

fn relsp(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_relsp")).args(args).output().unwrap()
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--output", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    relsp(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stationary_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config());
    let out = tmp.path().join("out");
    let o = run("stationary", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["manifest.json", "solution.json", "convergence.csv", "profiles.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let profiles = std::fs::read_to_string(out.join("profiles.csv")).unwrap();
    let mut lines = profiles.lines();
    assert_eq!(lines.next(), Some("x,V0,n0"));
    assert_eq!(lines.count(), 64);
    let conv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(conv.starts_with("iteration,phi,residual_poisson,residual_constraint,sigma,damping\n"));
    let sol: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    assert!(sol["relative_duality_gap"].as_f64().unwrap() <= 1e-7);
}

#[test]
fn forced_non_convergence_exits_one_with_log() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_config();
    c.solver.max_outer = 1;
    let cfg = write_config(tmp.path(), "c.json", &c);
    let out = tmp.path().join("out");
    let o = run("stationary", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("did not converge"), "{}", stderr(&o));
    let conv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(conv.lines().count() >= 2);
}

#[test]
fn malformed_config_exits_two_with_location() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"domain\": {\n    \"dim\": 1,\n    oops\n}").unwrap();
    let o = run("stationary", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
    let o = run("stationary", &tmp.path().join("missing.json"), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_solver_tolerance_is_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_config();
    c.solver.tol_poisson = 0.0;
    let cfg = write_config(tmp.path(), "c.json", &c);
    assert_eq!(run("stationary", &cfg, &tmp.path().join("out"), &[]).status.code(), Some(2));
}

#[test]
fn bad_flags_exit_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config());
    assert_eq!(run("stationary", &cfg, &tmp.path().join("out"), &["--threads", "0"]).status.code(), Some(2));
    assert_eq!(relsp(&["stationary"]).status.code(), Some(2));
}

#[test]
fn evolve_from_stationary_is_flat() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_config();
    c.initial_state = InitialState::Stationary;
    // the splitting moves the stationary density by O(dt^2)
    c.evolution.dt = 5e-3;
    c.evolution.record_every = 20;
    let cfg = write_config(tmp.path(), "c.json", &c);
    let out = tmp.path().join("out");
    let o = run("evolve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,energy,casimir,ortho_defect,hminus1_dist,mass"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r[4] <= 1e-6), "{csv}");
}

#[test]
fn zero_steps_single_row() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_config();
    c.evolution.t_end = 0.0;
    let cfg = write_config(tmp.path(), "c.json", &c);
    let out = tmp.path().join("out");
    assert_eq!(run("evolve", &cfg, &out, &[]).status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().count(), 2);
}

#[test]
fn overflow_aborts_with_last_good_time() {
    let tmp = TempDir::new().unwrap();
    let c = small_config();
    let cfg = write_config(tmp.path(), "c.json", &c);
    let solved = tmp.path().join("solved");
    assert_eq!(run("stationary", &cfg, &solved, &[]).status.code(), Some(0));
    let mut file: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(solved.join("solution.json")).unwrap()).unwrap();
    let occ = file["solution"]["state"]["occupations"].as_array_mut().unwrap();
    occ[0] = 1e140.into();
    let snap = tmp.path().join("huge.json");
    std::fs::write(&snap, serde_json::to_string(&file).unwrap()).unwrap();
    let mut c = small_config();
    c.initial_state = InitialState::Snapshot { path: snap };
    let cfg = write_config(tmp.path(), "c2.json", &c);
    let out = tmp.path().join("out");
    let o = run("evolve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("last good time"), "{}", stderr(&o));
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn stability_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run("stability", &cfg, &a, &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(run("stability", &cfg, &b, &["--threads", "3"]).status.code(), Some(0));
    for f in ["stability.csv", "manifest.json", "stability_summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("stability.csv")).unwrap();
    assert!(csv.starts_with("epsilon,seed,casimir_gap,max_lhs,violation_margin,pass\n"));
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn seed_override_changes_manifest_and_rows() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run("stability", &cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run("stability", &cfg, &b, &["--seed", "7"]).status.code(), Some(0));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"], serde_json::json!([7, 8, 9]));
    assert_ne!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
    assert_ne!(std::fs::read(a.join("stability.csv")).unwrap(), std::fs::read(b.join("stability.csv")).unwrap());
}

#[test]
fn stability_zero_margin_is_controlled() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_config();
    c.experiment.margin_tol = 0.0;
    let cfg = write_config(tmp.path(), "c.json", &c);
    let out = tmp.path().join("out");
    let o = run("stability", &cfg, &out, &[]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("stability_summary.json")).unwrap()).unwrap();
    let expected = if summary["all_pass"].as_bool().unwrap() { 0 } else { 1 };
    assert_eq!(o.status.code(), Some(expected));

    let mut c = small_config();
    c.experiment.perturbation_sizes.clear();
    let cfg = write_config(tmp.path(), "c2.json", &c);
    assert_eq!(run("stability", &cfg, &tmp.path().join("x"), &[]).status.code(), Some(2));
}

#[test]
fn verify_default_subset_and_injection() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config());
    let out = tmp.path().join("all");
    let o = run("verify", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["suites"].as_array().unwrap().len(), 4);

    let out = tmp.path().join("subset");
    assert_eq!(run("verify", &cfg, &out, &["--suites", "casimir,state"]).status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    let names: Vec<&str> = v["suites"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["casimir", "state"]);

    let out = tmp.path().join("bad");
    let o = run("verify", &cfg, &out, &["--suites", "casimir", "--inject-bad-distribution"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("class_properties"), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], false);

    assert_eq!(run("verify", &cfg, &tmp.path().join("u"), &["--suites", "bogus"]).status.code(), Some(2));
}

#[test]
fn snapshot_restart_matches_fresh_solve() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_config();
    c.initial_state = InitialState::Stationary;
    let cfg = write_config(tmp.path(), "c.json", &c);
    let solved = tmp.path().join("solved");
    assert_eq!(run("stationary", &cfg, &solved, &[]).status.code(), Some(0));
    let fresh = tmp.path().join("fresh");
    assert_eq!(run("evolve", &cfg, &fresh, &[]).status.code(), Some(0));
    c.initial_state = InitialState::Snapshot { path: solved.join("solution.json") };
    let cfg = write_config(tmp.path(), "c2.json", &c);
    let restarted = tmp.path().join("restarted");
    assert_eq!(run("evolve", &cfg, &restarted, &[]).status.code(), Some(0));
    assert_eq!(
        std::fs::read(fresh.join("trajectory.csv")).unwrap(),
        std::fs::read(restarted.join("trajectory.csv")).unwrap()
    );
}
