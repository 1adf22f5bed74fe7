//! Derivative checks against finite differences and manufactured-solution
//! convergence studies, shared by the `verify` and `convergence` commands.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{GridSpec, ScalarField, StaggeredVelocity, TimeGrid};
use crate::initial::{build_initial_condition, InitialCondition};
use crate::linsolve::{helmholtz_solve, HelmholtzOperator, DEFAULT_LINEAR_TOL};
use crate::objective::{directional_derivative, evaluate, hessian_quadratic_form, CostWeights};
use crate::pde::{adjoint_solve, forward_solve, ControlTrajectory};
use crate::stokes::stokes_solve;

/// Divergence-free control with entries `stokes(f_i, 1/amplitude)` for
/// uniformly random forces `f_i ∈ [-1,1]`.
pub fn random_solenoidal_control(
    grid: GridSpec,
    timegrid: TimeGrid,
    rng: &mut ChaCha8Rng,
    amplitude: f64,
) -> Result<ControlTrajectory> {
    let entries = (0..timegrid.steps())
        .map(|_| {
            let mut f = StaggeredVelocity::zeros(grid);
            f.u_mut().mapv_inplace(|_| rng.random_range(-1.0..1.0));
            f.w_mut().mapv_inplace(|_| rng.random_range(-1.0..1.0));
            f.zero_boundary_normal();
            stokes_solve(&f, 1.0 / amplitude, 1e-10).map(|s| s.velocity)
        })
        .collect::<Result<Vec<_>>>()?;
    ControlTrajectory::new(timegrid, entries)
}

/// Small derivative-check problem: Example-1 data and a random base control.
#[derive(Debug, Clone)]
pub struct CheckProblem {
    pub t0: ScalarField,
    pub v: ControlTrajectory,
    pub weights: CostWeights,
    pub kappa: f64,
}

impl CheckProblem {
    pub fn new(mesh: usize, steps: usize, weights: CostWeights, kappa: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let grid = GridSpec::square(mesh)?;
        let tg = TimeGrid::new(1.0, steps)?;
        Ok(CheckProblem {
            t0: build_initial_condition(&InitialCondition::Example1, grid)?,
            v: random_solenoidal_control(grid, tg, rng, 30.0)?,
            weights,
            kappa,
        })
    }

    pub fn cost(&self, v: &ControlTrajectory) -> Result<f64> {
        Ok(evaluate(&forward_solve(v, &self.t0, self.kappa)?, v, self.weights)?.j_total)
    }

    fn shifted(&self, h: &ControlTrajectory, eps: f64) -> ControlTrajectory {
        let mut v = self.v.clone();
        v.axpy(eps, h);
        v
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DerivativeCheck {
    pub direction: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Adjoint directional derivative against the central difference of `J`.
pub fn gradient_check(p: &CheckProblem, directions: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DerivativeCheck>> {
    let t = forward_solve(&p.v, &p.t0, p.kappa)?;
    let q = adjoint_solve(&p.v, &t, p.weights.alpha, p.weights.beta, p.kappa)?;
    (0..directions)
        .map(|k| {
            let h = random_solenoidal_control(p.v.grid(), p.v.timegrid(), rng, 30.0)?;
            let analytic = directional_derivative(&p.v, &t, &q, &h, p.weights.gamma)?;
            let eps = 1e-5 * p.v.norm().max(1.0) / h.norm();
            let fd = (p.cost(&p.shifted(&h, eps))? - p.cost(&p.shifted(&h, -eps))?) / (2.0 * eps);
            Ok(DerivativeCheck {
                direction: k,
                analytic,
                finite_difference: fd,
                rel_error: rel(analytic, fd),
            })
        })
        .collect()
}

/// Hessian quadratic form against the second central difference of `J`.
pub fn hessian_check(p: &CheckProblem, directions: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DerivativeCheck>> {
    let t = forward_solve(&p.v, &p.t0, p.kappa)?;
    let q = adjoint_solve(&p.v, &t, p.weights.alpha, p.weights.beta, p.kappa)?;
    let j0 = p.cost(&p.v)?;
    (0..directions)
        .map(|k| {
            let h = random_solenoidal_control(p.v.grid(), p.v.timegrid(), rng, 30.0)?;
            let analytic = hessian_quadratic_form(&p.v, &t, &q, &h, p.weights, p.kappa)?;
            let eps = 1e-3 * p.v.norm().max(1.0) / h.norm();
            let sd = (p.cost(&p.shifted(&h, eps))? - 2.0 * j0 + p.cost(&p.shifted(&h, -eps))?) / (eps * eps);
            Ok(DerivativeCheck {
                direction: k,
                analytic,
                finite_difference: sd,
                rel_error: rel(analytic, sd),
            })
        })
        .collect()
}

/// Seeded generator for reproducible verification runs.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub study: String,
    /// Cells per side, or time steps for temporal studies.
    pub n: usize,
    pub error: f64,
    /// `error(previous) / error(this)`; absent on the first row.
    pub ratio: Option<f64>,
}

fn table(study: &str, ns: &[usize], err: impl Fn(usize) -> Result<f64>) -> Result<Vec<ConvergenceRow>> {
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(ns.len());
    for &n in ns {
        let error = err(n)?;
        let ratio = rows.last().map(|r| r.error / error);
        rows.push(ConvergenceRow { study: study.into(), n, error, ratio });
    }
    Ok(rows)
}

/// `(I - cΔ)u = f` with `u = cos(πx)cos(2πy)`; max-norm error.
pub fn helmholtz_convergence(ns: &[usize]) -> Result<Vec<ConvergenceRow>> {
    let c = 0.3;
    table("helmholtz", ns, |n| {
        let g = GridSpec::square(n)?;
        let exact = |x: f64, y: f64| (PI * x).cos() * (2.0 * PI * y).cos();
        let rhs = ScalarField::from_fn(g, |x, y| (1.0 + 5.0 * c * PI * PI) * exact(x, y));
        let (mut u, _) = helmholtz_solve(&HelmholtzOperator::new(g, c)?, &rhs, DEFAULT_LINEAR_TOL)?;
        u.axpy(-1.0, &ScalarField::from_fn(g, exact));
        Ok(u.norm_inf())
    })
}

/// No-slip Stokes with a polynomial-trigonometric exact velocity; `L²` error.
pub fn stokes_convergence(ns: &[usize]) -> Result<Vec<ConvergenceRow>> {
    let gamma = 0.7;
    table("stokes", ns, |n| {
        let g = GridSpec::square(n)?;
        let u_ex = |x: f64, y: f64| PI * (PI * x).sin().powi(2) * (2.0 * PI * y).sin();
        let w_ex = |x: f64, y: f64| -PI * (2.0 * PI * x).sin() * (PI * y).sin().powi(2);
        let lap_u = |x: f64, y: f64| 2.0 * PI.powi(3) * (2.0 * PI * y).sin() * (2.0 * (2.0 * PI * x).cos() - 1.0);
        let lap_w = |x: f64, y: f64| -2.0 * PI.powi(3) * (2.0 * PI * x).sin() * (2.0 * (2.0 * PI * y).cos() - 1.0);
        // pressure cos(πx)cos(πy)
        let fx = |x: f64, y: f64| -gamma * lap_u(x, y) - PI * (PI * x).sin() * (PI * y).cos();
        let fy = |x: f64, y: f64| -gamma * lap_w(x, y) - PI * (PI * x).cos() * (PI * y).sin();
        let s = stokes_solve(&StaggeredVelocity::from_fns(g, fx, fy), gamma, 1e-10)?;
        let mut e = s.velocity;
        e.axpy(-1.0, &StaggeredVelocity::from_fns(g, u_ex, w_ex));
        Ok(e.norm_l2())
    })
}

/// Backward-Euler diffusion of a discrete eigenmode against its exact
/// semi-discrete decay `exp(-κμt)`; `L²` error at `t = 1`.
pub fn time_convergence(steps: &[usize]) -> Result<Vec<ConvergenceRow>> {
    let kappa = 0.05;
    let g = GridSpec::square(16)?;
    let t0 = ScalarField::from_fn(g, |x, y| (PI * x).cos() * (PI * y).cos());
    let mu = 2.0 * 4.0 / g.hx().powi(2) * (PI * g.hx() / 2.0).sin().powi(2);
    table("time-diffusion", steps, |n| {
        let tg = TimeGrid::new(1.0, n)?;
        let t = forward_solve(&ControlTrajectory::zeros(g, tg), &t0, kappa)?;
        let mut e = t.last().clone();
        e.axpy(-(-kappa * mu).exp(), &t0);
        Ok(e.norm_l2())
    })
}

/// Advection-diffusion under a steady cellular flow against a reference
/// computed with 64 times the finest step count; `L²` error at `t = 1`.
pub fn advection_time_convergence(steps: &[usize]) -> Result<Vec<ConvergenceRow>> {
    let kappa = 0.05;
    let g = GridSpec::square(32)?;
    let t0 = build_initial_condition(&InitialCondition::Example1, g)?;
    // streamfunction 0.2·sin²(πx)sin²(πy)
    let u = |x: f64, y: f64| 0.4 * PI * (PI * x).sin().powi(2) * (PI * y).sin() * (PI * y).cos();
    let w = |x: f64, y: f64| -0.4 * PI * (PI * x).sin() * (PI * x).cos() * (PI * y).sin().powi(2);
    let run = |n: usize| -> Result<ScalarField> {
        let tg = TimeGrid::new(1.0, n)?;
        let v = ControlTrajectory::from_fns(g, tg, |x, y, _| u(x, y), |x, y, _| w(x, y));
        Ok(forward_solve(&v, &t0, kappa)?.last().clone())
    };
    let reference = run(64 * steps.iter().copied().max().unwrap_or(1))?;
    table("time-advection", steps, |n| {
        let mut e = run(n)?;
        e.axpy(-1.0, &reference);
        Ok(e.norm_l2())
    })
}
