//! Open-loop optimal control by fixed-point iteration on the optimality
//! system, accelerated by Anderson mixing and warm-started by mesh
//! continuation.
//!
//! One application of the Picard map `G` runs the state forward under the
//! current control, the adjoint backward, and one Stokes solve per step:
//!
//! ```text
//! G(v)_j = stokes(face_force(λ^{j+1}, T^j), γ),   j = 0..n_t-1
//! ```
//!
//! Fixed points of `G` are exactly the stationary points of the discrete
//! objective. Iteration stops when `‖G(v) - v‖ ≤ tol·(1 + ‖v‖)` in the
//! discrete `L²(0,t_f; L²)` norm.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::anderson::{AndersonMemory, StepKind};
use crate::error::{Error, Result};
use crate::grid::{face_force, GridSpec, ScalarField, StaggeredVelocity, TimeGrid};
use crate::initial::{build_initial_condition, InitialCondition};
use crate::objective::{evaluate, CostWeights, ObjectiveBreakdown};
use crate::pde::{adjoint_solve, forward_solve, ControlTrajectory, Trajectory};
use crate::stokes::{stokes_solve, DEFAULT_STOKES_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub kappa: f64,
    pub weights: CostWeights,
    pub grid: GridSpec,
    pub timegrid: TimeGrid,
    pub initial: InitialCondition,
    /// Relative fixed-point residual at which a level is converged.
    pub tol: f64,
    /// Anderson memory depth; 0 gives plain Picard.
    pub memory: usize,
    /// Iteration cap per continuation level.
    pub max_iter: usize,
    /// Coarsest `(nx, ny, nt)`; the target must be a power-of-two multiple.
    pub coarsest: (usize, usize, usize),
    pub stokes_tol: f64,
    /// Residual growth factor that triggers an Anderson reset.
    pub safeguard: f64,
}

impl OptimizeConfig {
    pub fn new(grid: GridSpec, timegrid: TimeGrid, initial: InitialCondition) -> Self {
        OptimizeConfig {
            kappa: 0.05,
            weights: CostWeights::default(),
            grid,
            timegrid,
            initial,
            tol: 1e-5,
            memory: 5,
            max_iter: 200,
            coarsest: (10, 10, 10),
            stokes_tol: DEFAULT_STOKES_TOL,
            safeguard: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidConfig(format!("kappa must be positive, got {}", self.kappa)));
        }
        self.weights.validate()?;
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.safeguard > 1.0) {
            return Err(Error::InvalidConfig("safeguard factor must exceed 1".into()));
        }
        self.levels().map(|_| ())
    }

    /// `(grid, timegrid)` for each continuation level, coarsest first.
    pub fn levels(&self) -> Result<Vec<(GridSpec, TimeGrid)>> {
        let (cx, cy, ct) = self.coarsest;
        let target = (self.grid.nx(), self.grid.ny(), self.timegrid.steps());
        let mut levels = Vec::new();
        let (mut nx, mut ny, mut nt) = (cx, cy, ct);
        loop {
            levels.push((GridSpec::new(nx, ny)?, TimeGrid::new(self.timegrid.t_final(), nt)?));
            if (nx, ny, nt) == target {
                return Ok(levels);
            }
            if nx > target.0 || ny > target.1 || nt > target.2 {
                return Err(Error::InvalidConfig(format!(
                    "target mesh ({},{},{}) is not a power-of-two refinement of ({cx},{cy},{ct})",
                    target.0, target.1, target.2
                )));
            }
            (nx, ny, nt) = (2 * nx, 2 * ny, 2 * nt);
        }
    }
}

/// State, adjoint and mapped control for one evaluation of `G`.
#[derive(Debug, Clone)]
pub struct PicardOutput {
    pub next: ControlTrajectory,
    pub state: Trajectory,
    pub adjoint: Trajectory,
}

/// One application of the Picard map.
pub fn picard_map(
    v: &ControlTrajectory,
    t0: &ScalarField,
    kappa: f64,
    weights: CostWeights,
    stokes_tol: f64,
) -> Result<PicardOutput> {
    let state = forward_solve(v, t0, kappa)?;
    let adjoint = adjoint_solve(v, &state, weights.alpha, weights.beta, kappa)?;
    let next = (0..v.len())
        .map(|j| {
            let force = face_force(adjoint.field(j + 1), state.field(j));
            stokes_solve(&force, weights.gamma, stokes_tol)
                .map(|s| s.velocity)
                .map_err(|e| e.at_time(j))
        })
        .collect::<Result<Vec<StaggeredVelocity>>>()?;
    Ok(PicardOutput {
        next: ControlTrajectory::new(v.timegrid(), next)?,
        state,
        adjoint,
    })
}

/// Relative fixed-point residual `‖g - v‖ / (1 + ‖v‖)`.
pub fn fixed_point_residual(v: &ControlTrajectory, g: &ControlTrajectory) -> f64 {
    let mut d = g.clone();
    d.axpy(-1.0, v);
    d.norm() / (1.0 + v.norm())
}

/// Anderson-mixed next iterate from `(v, G(v))`.
pub fn anderson_step(
    mem: &mut AndersonMemory,
    v: &ControlTrajectory,
    g: &ControlTrajectory,
) -> Result<(ControlTrajectory, StepKind)> {
    let (next, kind) = mem.step(&v.to_flat(), &g.to_flat());
    Ok((ControlTrajectory::from_flat(v.grid(), v.timegrid(), &next)?, kind))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub level: usize,
    pub iteration: usize,
    pub residual: f64,
    pub objective: f64,
    /// `"picard"`, `"anderson(k)"`, `"fallback"` or `"reset"`.
    pub step: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelReport {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub objective: ObjectiveBreakdown,
    pub anderson_fallbacks: usize,
    pub safeguard_resets: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct OptimalControlResult {
    pub v: ControlTrajectory,
    pub state: Trajectory,
    pub adjoint: Trajectory,
    pub objective: ObjectiveBreakdown,
    /// Picard-map evaluations on the finest level.
    pub iterations: usize,
    /// Evaluations summed over all levels.
    pub total_iterations: usize,
    /// Finest-level residuals, one per evaluation.
    pub residual_history: Vec<f64>,
    pub levels: Vec<LevelReport>,
    pub wall_time: f64,
}

pub fn solve_optimal(cfg: &OptimizeConfig) -> Result<OptimalControlResult> {
    solve_optimal_with(cfg, |_| {})
}

/// As [`solve_optimal`], calling `observe` after every Picard evaluation.
pub fn solve_optimal_with(
    cfg: &OptimizeConfig,
    mut observe: impl FnMut(&IterationRecord),
) -> Result<OptimalControlResult> {
    cfg.validate()?;
    let start = Instant::now();
    let levels = cfg.levels()?;
    let mut reports = Vec::with_capacity(levels.len());
    let mut guess: Option<ControlTrajectory> = None;
    let mut last = None;
    for (lvl, &(grid, tg)) in levels.iter().enumerate() {
        let wrap = |e: Error| Error::AtLevel {
            level: lvl,
            nx: grid.nx(),
            ny: grid.ny(),
            nt: tg.steps(),
            source: Box::new(e),
        };
        let v0 = match guess.take() {
            Some(coarse) => coarse.prolong(grid, tg).map_err(wrap)?,
            None => ControlTrajectory::zeros(grid, tg),
        };
        let t0 = build_initial_condition(&cfg.initial, grid).map_err(wrap)?;
        let (out, report) = solve_level(cfg, lvl, v0, &t0, &mut observe).map_err(wrap)?;
        log::info!(
            "level {lvl} ({}x{}x{}): {} iterations, J = {:.6}",
            grid.nx(),
            grid.ny(),
            tg.steps(),
            report.iterations,
            report.objective.j_total
        );
        guess = Some(out.0.clone());
        reports.push(report);
        last = Some(out);
    }
    let ((v, state, adjoint), _) = last.map(|l| (l, ())).expect("at least one level");
    let fine = reports.last().expect("at least one level");
    Ok(OptimalControlResult {
        objective: fine.objective,
        iterations: fine.iterations,
        total_iterations: reports.iter().map(|r| r.iterations).sum(),
        residual_history: fine.residual_history.clone(),
        v,
        state,
        adjoint,
        levels: reports,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

type LevelOutput = (ControlTrajectory, Trajectory, Trajectory);

fn solve_level(
    cfg: &OptimizeConfig,
    level: usize,
    mut v: ControlTrajectory,
    t0: &ScalarField,
    observe: &mut impl FnMut(&IterationRecord),
) -> Result<(LevelOutput, LevelReport)> {
    let start = Instant::now();
    let mut mem = AndersonMemory::new(cfg.memory);
    let mut history = Vec::new();
    let mut resets = 0;
    let mut step_label = String::from("initial");
    for k in 1..=cfg.max_iter {
        let out = picard_map(&v, t0, cfg.kappa, cfg.weights, cfg.stokes_tol)?;
        let res = fixed_point_residual(&v, &out.next);
        if !res.is_finite() {
            return Err(Error::NonConvergence {
                solver: "AA-Picard",
                iterations: k,
                residual: res,
            });
        }
        let objective = evaluate(&out.state, &v, cfg.weights)?;
        let grew = history.last().is_some_and(|&prev: &f64| res > cfg.safeguard * prev);
        history.push(res);
        observe(&IterationRecord {
            level,
            iteration: k,
            residual: res,
            objective: objective.j_total,
            step: step_label.clone(),
        });
        log::debug!("level {level} iter {k}: residual {res:.3e}, J {:.6}", objective.j_total);
        if res <= cfg.tol {
            let report = LevelReport {
                nx: v.grid().nx(),
                ny: v.grid().ny(),
                nt: v.timegrid().steps(),
                iterations: k,
                residual_history: history,
                objective,
                anderson_fallbacks: mem.fallbacks(),
                safeguard_resets: resets,
                wall_time: start.elapsed().as_secs_f64(),
            };
            return Ok(((v, out.state, out.adjoint), report));
        }
        if grew {
            mem.reset();
            resets += 1;
            step_label = "reset".into();
            v = out.next;
            continue;
        }
        let (next, kind) = anderson_step(&mut mem, &v, &out.next)?;
        step_label = match kind {
            StepKind::Picard => "picard".into(),
            StepKind::Mixed(m) => format!("anderson({m})"),
            StepKind::Fallback => "fallback".into(),
        };
        v = next;
    }
    Err(Error::NonConvergence {
        solver: "AA-Picard",
        iterations: cfg.max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}
