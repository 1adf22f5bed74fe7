//! Experiment drivers and result export.
//!
//! Every run writes into one directory: `config.toml` (the effective
//! configuration), CSV tables, temperature snapshots, and `manifest.json`
//! listing every other file with its byte and row counts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{Mode, RunConfig};
use super::verify;
use crate::error::{Error, Result};
use crate::feedback::{best_tau, mix_norm, simulate_closed_loop, tau_sweep};
use crate::grid::{deviation, divergence, mean};
use crate::initial::build_initial_condition;
use crate::io::{write_csv, write_json, write_snapshot, write_text, OutputRecord};
use crate::objective::{evaluate, running_objective, CostWeights, ObjectiveBreakdown};
use crate::optimize::{solve_optimal_with, IterationRecord};
use crate::pde::{forward_solve, ControlTrajectory, Trajectory};

/// Environment variable naming the directory under which runs are created
/// when no explicit output directory is given.
pub const OUTPUT_ROOT_ENV: &str = "CONVCOOL_OUTPUT_ROOT";

pub const METRICS_HEADER: [&str; 7] = ["t", "dT_l2", "v_l2", "div_l2", "mean_T", "mix_norm", "J_running"];
pub const SUMMARY_HEADER: [&str; 8] = ["J", "J_alpha", "J_beta", "J_gamma", "max_div", "max_vel", "iter", "cpu"];
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub mode: Mode,
    /// Paths are relative to the run directory.
    pub outputs: Vec<OutputRecord>,
    pub wall_time: f64,
    pub solver_reports: BTreeMap<String, Value>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Every listed file exists with the recorded counts, and every file
    /// under `dir` other than the manifest is listed.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for rec in &self.outputs {
            OutputRecord { path: dir.join(&rec.path), ..rec.clone() }.verify()?;
        }
        let listed: std::collections::BTreeSet<PathBuf> = self.outputs.iter().map(|r| r.path.clone()).collect();
        for file in files_under(dir)? {
            let rel = file.strip_prefix(dir).expect("walked from dir").to_path_buf();
            if rel != Path::new(MANIFEST_FILE) && !listed.contains(&rel) {
                return Err(Error::Parse(format!("{} is not listed in the manifest", rel.display())));
            }
        }
        Ok(())
    }
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Files written so far, recorded relative to the run directory.
struct Outputs {
    dir: PathBuf,
    records: Vec<OutputRecord>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs { dir: dir.to_path_buf(), records: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn push(&mut self, rec: OutputRecord) {
        let rel = rec.path.strip_prefix(&self.dir).map(Path::to_path_buf).unwrap_or(rec.path.clone());
        self.records.push(OutputRecord { path: rel, ..rec });
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let rec = write_csv(&self.path(name), header, rows)?;
        self.push(rec);
        Ok(())
    }
}

/// Result of one CLI-level run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Human-readable result lines for the terminal.
    pub summary: Vec<String>,
}

/// Default run directory: `$CONVCOOL_OUTPUT_ROOT/<tag>` or `runs/<tag>`.
pub fn default_output_dir(cfg: &RunConfig) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    let init = format!("{:?}", cfg.initial).to_lowercase();
    let mut tag = format!("{}-{init}-n{}-t{}", cfg.mode.label(), cfg.mesh, cfg.steps);
    if cfg.mode == Mode::Feedback {
        tag.push_str(&format!("-tau{}", cfg.tau));
    }
    root.join(tag)
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// One metrics row per time node. Row `i ≥ 1` pairs `T^i` with the control
/// entry `i-1` that produced it; row 0 shows entry 0.
pub fn metrics_rows(t: &Trajectory, v: &ControlTrajectory, w: CostWeights) -> Result<Vec<Vec<String>>> {
    let running = running_objective(t, v, w)?;
    let tg = t.timegrid();
    (0..=tg.steps())
        .map(|i| {
            let e = v.entry(i.saturating_sub(1));
            let f = t.field(i);
            Ok(vec![
                num(tg.time(i)),
                num(deviation(f).norm_l2()),
                num(e.norm_l2()),
                num(divergence(e).norm_l2()),
                num(mean(f)),
                num(mix_norm(f)?),
                num(running[i]),
            ])
        })
        .collect()
}

pub fn summary_row(b: &ObjectiveBreakdown, iterations: Option<usize>, cpu: f64) -> Vec<String> {
    vec![
        num(b.j_total),
        num(b.j_alpha),
        num(b.j_beta),
        num(b.j_gamma),
        num(b.max_div),
        num(b.max_vel),
        iterations.map(|k| k.to_string()).unwrap_or_default(),
        format!("{cpu:.3}"),
    ]
}

/// Writes the metrics CSV, the summary CSV and the configured snapshots.
pub fn export_metrics(
    dir: &Path,
    t: &Trajectory,
    v: &ControlTrajectory,
    cfg: &RunConfig,
    objective: &ObjectiveBreakdown,
    iterations: Option<usize>,
    cpu: f64,
) -> Result<Vec<OutputRecord>> {
    let mut out = Outputs::new(dir)?;
    write_run_tables(&mut out, t, v, cfg, objective, iterations, cpu)?;
    Ok(out.records)
}

fn write_run_tables(
    out: &mut Outputs,
    t: &Trajectory,
    v: &ControlTrajectory,
    cfg: &RunConfig,
    objective: &ObjectiveBreakdown,
    iterations: Option<usize>,
    cpu: f64,
) -> Result<()> {
    out.csv("metrics.csv", &METRICS_HEADER, &metrics_rows(t, v, cfg.weights()?)?)?;
    out.csv("summary.csv", &SUMMARY_HEADER, &[summary_row(objective, iterations, cpu)])?;
    let tg = t.timegrid();
    let mut nodes: Vec<usize> = cfg.snapshot_times.iter().map(|&s| tg.nearest_node(s)).collect();
    nodes.sort_unstable();
    nodes.dedup();
    for i in nodes {
        let name = format!("snapshots/T_{i:05}.bin");
        for rec in write_snapshot(&out.path(&name), t.field(i), tg.time(i), "T")? {
            out.push(rec);
        }
    }
    Ok(())
}

fn objective_report(b: &ObjectiveBreakdown) -> Value {
    serde_json::to_value(b).expect("breakdown serialises")
}

fn finish(
    mut out: Outputs,
    cfg: &RunConfig,
    start: Instant,
    reports: BTreeMap<String, Value>,
    summary: Vec<String>,
) -> Result<RunOutcome> {
    let rec = write_text(&out.path("config.toml"), &cfg.to_toml_string()?, "config")?;
    out.push(rec);
    let manifest = RunManifest {
        config: cfg.clone(),
        mode: cfg.mode,
        outputs: out.records.clone(),
        wall_time: start.elapsed().as_secs_f64(),
        solver_reports: reports,
    };
    write_json(&out.path(MANIFEST_FILE), &manifest, "manifest")?;
    Ok(RunOutcome { dir: out.dir, manifest, summary })
}

fn breakdown_line(label: &str, b: &ObjectiveBreakdown) -> String {
    format!(
        "{label}: J = {:.4}  J_alpha = {:.4}  J_beta = {:.4}  J_gamma = {:.4}  max_div = {:.2e}  max_vel = {:.3} (|u|+|w|: {:.3})",
        b.j_total, b.j_alpha, b.j_beta, b.j_gamma, b.max_div, b.max_vel, b.max_vel_uw
    )
}

/// Uncontrolled or feedback-controlled simulation.
pub fn run_simulation(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = Outputs::new(dir)?;
    let grid = cfg.grid()?;
    let t0 = build_initial_condition(&cfg.initial_condition()?, grid)?;
    let mut reports = BTreeMap::new();
    let (traj, control, objective, cpu) = match cfg.mode {
        Mode::None => {
            let clock = Instant::now();
            let v = ControlTrajectory::zeros(grid, cfg.timegrid()?);
            let t = forward_solve(&v, &t0, cfg.kappa)?;
            let cpu = clock.elapsed().as_secs_f64();
            let b = evaluate(&t, &v, cfg.weights()?)?;
            (t, v, b, cpu)
        }
        Mode::Feedback => {
            let run = simulate_closed_loop(&cfg.feedback_config()?, &t0)?;
            reports.insert("tau".into(), json!(cfg.tau));
            reports.insert("monotone".into(), json!(run.is_monotone()));
            reports.insert("mix_norm_decay_rate".into(), json!(run.mix_norm_decay_rate()));
            (run.trajectory, run.control, run.objective, run.wall_time)
        }
        other => {
            return Err(Error::InvalidConfig(format!("simulate runs modes none or feedback, not {}", other.label())));
        }
    };
    let drift = traj.fields().iter().map(|f| (mean(f) - mean(&t0)).abs()).fold(0.0, f64::max);
    reports.insert("objective".into(), objective_report(&objective));
    reports.insert("mean_drift".into(), json!(drift));
    reports.insert("cpu".into(), json!(cpu));
    write_run_tables(&mut out, &traj, &control, cfg, &objective, None, cpu)?;
    let summary = vec![breakdown_line(cfg.mode.label(), &objective), format!("cpu = {cpu:.2} s, mean drift = {drift:.2e}")];
    finish(out, cfg, start, reports, summary)
}

/// Optimal control by AA-Picard with mesh continuation.
pub fn run_optimization(cfg: &RunConfig, dir: &Path, mut observe: impl FnMut(&IterationRecord)) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = Outputs::new(dir)?;
    let ocfg = cfg.optimize_config()?;
    let mut history = Vec::new();
    let result = solve_optimal_with(&ocfg, |r| {
        observe(r);
        history.push(r.clone());
    })?;
    let t0 = result.state.first().clone();
    let baseline = evaluate(
        &forward_solve(&ControlTrajectory::zeros(ocfg.grid, ocfg.timegrid), &t0, ocfg.kappa)?,
        &ControlTrajectory::zeros(ocfg.grid, ocfg.timegrid),
        ocfg.weights,
    )?;
    write_run_tables(&mut out, &result.state, &result.v, cfg, &result.objective, Some(result.iterations), result.wall_time)?;
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|r| vec![r.level.to_string(), r.iteration.to_string(), num(r.residual), num(r.objective), r.step.clone()])
        .collect();
    out.csv("iterations.csv", &["level", "iteration", "residual", "J", "step"], &rows)?;
    let mut reports = BTreeMap::new();
    reports.insert("objective".into(), objective_report(&result.objective));
    reports.insert("objective_without_control".into(), objective_report(&baseline));
    reports.insert("iterations".into(), json!(result.iterations));
    reports.insert("total_iterations".into(), json!(result.total_iterations));
    reports.insert("levels".into(), serde_json::to_value(&result.levels).expect("levels serialise"));
    reports.insert("cpu".into(), json!(result.wall_time));
    let summary = vec![
        breakdown_line("optimal", &result.objective),
        format!("no control: J = {:.4}", baseline.j_total),
        format!(
            "iterations = {} on the finest level ({} over {} levels), cpu = {:.1} s",
            result.iterations,
            result.total_iterations,
            result.levels.len(),
            result.wall_time
        ),
    ];
    finish(out, cfg, start, reports, summary)
}

/// Feedback runs over the configured τ grid.
pub fn run_sweep(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = Outputs::new(dir)?;
    let t0 = build_initial_condition(&cfg.initial_condition()?, cfg.grid()?)?;
    let taus = cfg.sweep_taus();
    let rows = tau_sweep(&cfg.feedback_config()?, &taus, &t0)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| match &r.result {
            Ok(b) => vec![
                num(r.tau),
                num(b.j_total),
                num(b.j_beta),
                num(b.j_gamma),
                num(b.max_div),
                num(b.max_vel),
                r.monotone.map(|m| m.to_string()).unwrap_or_default(),
                "ok".into(),
            ],
            Err(e) => {
                let mut row = vec![num(r.tau)];
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(format!("{}: {e}", e.category().label()).replace(',', ";"));
                row
            }
        })
        .collect();
    out.csv("sweep.csv", &["tau", "J", "J_beta", "J_gamma", "max_div", "max_vel", "monotone", "status"], &table)?;
    let best = best_tau(&rows);
    let mut reports = BTreeMap::new();
    reports.insert("best_tau".into(), json!(best.map(|b| b.0)));
    reports.insert("best_J".into(), json!(best.map(|b| b.1)));
    reports.insert("failures".into(), json!(rows.iter().filter(|r| r.result.is_err()).count()));
    let mut summary: Vec<String> = rows
        .iter()
        .map(|r| match &r.result {
            Ok(b) => format!("tau = {:.2}: J = {:.4}", r.tau, b.j_total),
            Err(e) => format!("tau = {:.2}: failed ({e})", r.tau),
        })
        .collect();
    match best {
        Some((tau, j)) => summary.push(format!("best tau = {tau:.2} (J = {j:.4})")),
        None => summary.push("no successful run".into()),
    }
    finish(out, cfg, start, reports, summary)
}

/// Which derivative checks a verification run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyChecks {
    pub gradient: bool,
    pub hessian: bool,
}

pub const GRADIENT_TOL: f64 = 1e-3;
pub const HESSIAN_TOL: f64 = 1e-2;

/// Adjoint gradient and Hessian checks against finite differences.
pub fn run_verification(cfg: &RunConfig, checks: VerifyChecks, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = Outputs::new(dir)?;
    let mut rng = verify::rng(cfg.seed);
    let problem = verify::CheckProblem::new(cfg.mesh, cfg.steps, cfg.weights()?, cfg.kappa, &mut rng)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut reports = BTreeMap::new();
    let mut failures = Vec::new();
    let mut record = |name: &str, tol: f64, results: Vec<verify::DerivativeCheck>| {
        let worst = results.iter().map(|c| c.rel_error).fold(0.0, f64::max);
        for c in &results {
            rows.push(vec![
                name.to_string(),
                c.direction.to_string(),
                num(c.analytic),
                num(c.finite_difference),
                num(c.rel_error),
            ]);
        }
        let pass = worst <= tol;
        summary.push(format!(
            "{name}: max relative error {worst:.3e} over {} directions (tolerance {tol:.0e}) {}",
            results.len(),
            if pass { "PASS" } else { "FAIL" }
        ));
        reports.insert(format!("{name}_max_rel_error"), json!(worst));
        if !pass {
            failures.push(format!("{name} error {worst:.3e} exceeds {tol:.0e}"));
        }
    };
    if checks.gradient {
        record("gradient", GRADIENT_TOL, verify::gradient_check(&problem, cfg.directions, &mut rng)?);
    }
    if checks.hessian {
        record("hessian", HESSIAN_TOL, verify::hessian_check(&problem, cfg.directions, &mut rng)?);
    }
    out.csv("verify.csv", &["check", "direction", "analytic", "finite_difference", "rel_error"], &rows)?;
    let outcome = finish(out, cfg, start, reports, summary)?;
    if failures.is_empty() {
        Ok(outcome)
    } else {
        for line in &outcome.summary {
            log::error!("{line}");
        }
        Err(Error::VerificationFailed(failures.join("; ")))
    }
}

/// Spatial and temporal manufactured-solution convergence tables.
pub fn run_convergence(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = Outputs::new(dir)?;
    let mut rows = verify::helmholtz_convergence(&[16, 32, 64, 128])?;
    rows.extend(verify::stokes_convergence(&[16, 32, 64, 128])?);
    rows.extend(verify::time_convergence(&[10, 20, 40, 80])?);
    rows.extend(verify::advection_time_convergence(&[40, 80, 160, 320])?);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.study.clone(), r.n.to_string(), num(r.error), r.ratio.map(num).unwrap_or_default()])
        .collect();
    out.csv("convergence.csv", &["study", "n", "error", "ratio"], &table)?;
    let mut failures = Vec::new();
    let summary: Vec<String> = rows
        .iter()
        .map(|r| {
            let range = if r.study.starts_with("time") { (1.8, 2.2) } else { (3.0, 5.0) };
            let verdict = match r.ratio {
                Some(q) if (range.0..=range.1).contains(&q) => "ok",
                Some(_) => {
                    failures.push(format!("{} n = {}", r.study, r.n));
                    "OUT OF RANGE"
                }
                None => "",
            };
            format!(
                "{:<15} n = {:>4}  error = {:.3e}  ratio = {}  {verdict}",
                r.study,
                r.n,
                r.error,
                r.ratio.map(|q| format!("{q:.3}")).unwrap_or_else(|| "-".into())
            )
        })
        .collect();
    let mut reports = BTreeMap::new();
    reports.insert("convergence".into(), serde_json::to_value(&rows).expect("rows serialise"));
    let outcome = finish(out, cfg, start, reports, summary)?;
    if failures.is_empty() {
        Ok(outcome)
    } else {
        for line in &outcome.summary {
            log::error!("{line}");
        }
        Err(Error::VerificationFailed(format!("convergence ratio out of range for {}", failures.join(", "))))
    }
}
