use std::path::Path;
use std::process::Command;

use convcool::app::run::RunManifest;
use convcool::app::RunConfig;
use convcool::grid::GridSpec;
use convcool::initial::{build_initial_condition, InitialCondition};

fn convcool(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_convcool"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = convcool(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn uncontrolled_run_writes_complete_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("none");
    run_ok(&["simulate", "--example", "2", "--control", "none", "--mesh", "16", "--steps", "8", "--output", dir.to_str().unwrap()]);
    let manifest = RunManifest::load(&dir).unwrap();
    manifest.verify(&dir).unwrap();
    assert_eq!(manifest.mode.label(), "none");

    let metrics = read(&dir, "metrics.csv");
    assert!(metrics.starts_with("t,dT_l2,v_l2,div_l2,mean_T,mix_norm,J_running\n"));
    assert_eq!(metrics.lines().count(), 1 + 9);
    assert!(column(&metrics, "v_l2").iter().all(|v| v == "0"));
    let summary = read(&dir, "summary.csv");
    assert!(summary.starts_with("J,J_alpha,J_beta,J_gamma,max_div,max_vel,iter,cpu\n"));

    // the t = 0 snapshot is the initial condition, byte for byte
    let t0 = build_initial_condition(&InitialCondition::Example2, GridSpec::square(16).unwrap()).unwrap();
    let bytes: Vec<u8> = t0.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(std::fs::read(dir.join("snapshots/T_00000.bin")).unwrap(), bytes);
    assert!(read(&dir, "snapshots/T_00000.txt").contains("nx = 16"));

    // the echoed config re-parses to the recorded one
    let echoed = RunConfig::from_toml_str(&read(&dir, "config.toml")).unwrap();
    assert_eq!(echoed, manifest.config);
}

#[test]
fn stray_files_break_manifest_completeness() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("r");
    run_ok(&["simulate", "--mesh", "8", "--steps", "4", "--output", dir.to_str().unwrap()]);
    let manifest = RunManifest::load(&dir).unwrap();
    std::fs::write(dir.join("extra.txt"), "x").unwrap();
    assert!(manifest.verify(&dir).is_err());
    std::fs::remove_file(dir.join("extra.txt")).unwrap();
    std::fs::write(dir.join("metrics.csv"), "t\n").unwrap();
    assert!(manifest.verify(&dir).is_err());
}

#[test]
fn feedback_manifest_echoes_tau() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("fb");
    let out = run_ok(&["simulate", "--control", "feedback", "--tau", "0.75", "--mesh", "16", "--steps", "16", "--output", dir.to_str().unwrap()]);
    assert!(out.contains("feedback: J = "));
    let m = RunManifest::load(&dir).unwrap();
    assert_eq!(m.mode.label(), "feedback");
    assert_eq!(m.config.tau, 0.75);
    assert_eq!(m.solver_reports["tau"], 0.75);
    assert_eq!(m.solver_reports["monotone"], true);
}

#[test]
fn identical_configs_give_identical_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for k in 0..2 {
        let dir = tmp.path().join(format!("v{k}"));
        run_ok(&["verify", "--mesh", "8", "--steps", "6", "--seed", "11", "--directions", "2", "--output", dir.to_str().unwrap()]);
        let d2 = tmp.path().join(format!("o{k}"));
        run_ok(&["optimize", "--mesh", "10", "--steps", "10", "--output", d2.to_str().unwrap()]);
        dirs.push((dir, d2));
    }
    let (a, b) = (&dirs[0], &dirs[1]);
    assert_eq!(read(&a.0, "verify.csv"), read(&b.0, "verify.csv"));
    for name in ["metrics.csv", "iterations.csv"] {
        assert_eq!(read(&a.1, name), read(&b.1, name), "{name}");
    }
    // the summary differs only in its wall-clock column
    let strip = |s: String| s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    assert_eq!(strip(read(&a.1, "summary.csv")), strip(read(&b.1, "summary.csv")));
    // a different seed changes the directions
    let c = tmp.path().join("v-other");
    run_ok(&["verify", "--mesh", "8", "--steps", "6", "--seed", "12", "--directions", "2", "--output", c.to_str().unwrap()]);
    assert_ne!(read(&a.0, "verify.csv"), read(&c, "verify.csv"));
}

#[test]
fn optimal_summary_row_has_iterations() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("opt");
    run_ok(&["optimize", "--example", "2", "--mesh", "20", "--steps", "20", "--output", dir.to_str().unwrap()]);
    let summary = read(&dir, "summary.csv");
    let iter: usize = column(&summary, "iter")[0].parse().unwrap();
    assert!(iter >= 1);
    let m = RunManifest::load(&dir).unwrap();
    m.verify(&dir).unwrap();
    let j: f64 = column(&summary, "J")[0].parse().unwrap();
    assert!(j < m.solver_reports["objective_without_control"]["j_total"].as_f64().unwrap());
    assert_eq!(m.solver_reports["levels"].as_array().unwrap().len(), 2);
}

#[test]
fn config_file_and_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "initial = \"example3\"\nmesh = 12\nsteps = 6\nsnapshot_times = [0.5]\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_convcool"))
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--steps", "4"])
        .env("CONVCOOL_OUTPUT_ROOT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("root/none-example3-n12-t4");
    let m = RunManifest::load(&dir).unwrap();
    assert_eq!((m.config.mesh, m.config.steps), (12, 4));
    assert!(dir.join("snapshots/T_00002.bin").exists());
}

#[test]
fn exit_codes_follow_error_category() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("x");
    let o = o.to_str().unwrap();
    assert_eq!(convcool(&["simulate", "--gamma", "-1", "--output", o]).status.code(), Some(2));
    assert_eq!(convcool(&["bogus"]).status.code(), Some(2));
    assert_eq!(convcool(&["optimize", "--mesh", "30", "--steps", "30", "--output", o]).status.code(), Some(2));
    // an iteration cap of one cannot meet the tolerance
    let out = convcool(&["optimize", "--mesh", "10", "--steps", "10", "--max-iter", "1", "--output", o]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"category\":\"solver\""));
    // a run directory that cannot be created
    let file = tmp.path().join("file");
    std::fs::write(&file, "").unwrap();
    let under = file.join("sub");
    assert_eq!(convcool(&["simulate", "--mesh", "8", "--steps", "2", "--output", under.to_str().unwrap()]).status.code(), Some(4));
    let missing = tmp.path().join("missing.bin");
    assert_eq!(convcool(&["simulate", "--initial-file", missing.to_str().unwrap(), "--output", o]).status.code(), Some(4));
}

#[test]
fn snapshot_files_serve_as_initial_conditions() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    run_ok(&["simulate", "--example", "1", "--mesh", "32", "--steps", "4", "--snapshot-times", "0", "--output", a.to_str().unwrap()]);
    let snap = a.join("snapshots/T_00000.bin");
    let b = tmp.path().join("b");
    run_ok(&["simulate", "--initial-file", snap.to_str().unwrap(), "--mesh", "16", "--steps", "4", "--output", b.to_str().unwrap()]);
    let m = RunManifest::load(&b).unwrap();
    m.verify(&b).unwrap();
    let mean_a: f64 = column(&read(&a, "metrics.csv"), "mean_T")[0].parse().unwrap();
    let mean_b: f64 = column(&read(&b, "metrics.csv"), "mean_T")[0].parse().unwrap();
    // 2x2 restriction preserves the mean
    assert!((mean_a - mean_b).abs() < 1e-12);
}

#[test]
fn verify_and_convergence_commands_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let v = tmp.path().join("v");
    let out = run_ok(&["verify", "--gradient", "--output", v.to_str().unwrap()]);
    assert!(out.contains("gradient: max relative error"));
    assert!(!out.contains("hessian"));
    let c = tmp.path().join("c");
    let out = run_ok(&["convergence", "--output", c.to_str().unwrap()]);
    assert!(out.contains("stokes") && !out.contains("OUT OF RANGE"));
    RunManifest::load(&c).unwrap().verify(&c).unwrap();
}
