//! Stationary Stokes problem on the MAC grid:
//!
//! ```text
//! -γ Δ_h v + ∇_h p = f,   ∇_h·v = 0,   v = 0 on Γ,   ⟨p⟩ = 0
//! ```
//!
//! Two solvers are provided:
//!
//! * [`SolveMethod::Capacitance`] (default, direct). With free-slip walls the
//!   MAC vector Laplacian commutes with the discrete gradient and the problem
//!   diagonalises in sine/cosine bases: a Neumann pressure solve followed by
//!   two component solves. No-slip walls differ from free-slip only by a
//!   diagonal term on the wall-adjacent tangential unknowns, which is handled
//!   with a Woodbury capacitance matrix assembled once per grid.
//! * [`SolveMethod::Uzawa`]: conjugate gradients on the pressure Schur
//!   complement, each step applying the no-slip vector Laplacian inverse.
//!
//! Both return identical answers to solver tolerance. Solutions for any
//! `γ > 0` are computed at `γ = 1` and the velocity is divided by `γ`.

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::grid::{divergence, gradient, vector_laplacian, GridSpec, ScalarField, StaggeredVelocity};
use crate::linsolve::{LinearSolveReport, SolveMethod};
use crate::spectral::{operators, GridOperators};

/// Default momentum/divergence tolerance.
pub const DEFAULT_STOKES_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct StokesSolution {
    pub velocity: StaggeredVelocity,
    /// Zero-mean pressure.
    pub pressure: ScalarField,
    pub report: LinearSolveReport,
    /// `‖∇_h·v‖₂` of the returned velocity.
    pub divergence_l2: f64,
}

pub fn stokes_solve(force: &StaggeredVelocity, gamma: f64, tol: f64) -> Result<StokesSolution> {
    stokes_solve_with(force, gamma, tol, SolveMethod::Capacitance)
}

/// `A⁻¹P f`: the velocity of the unit-viscosity Stokes problem.
pub fn apply_inverse_stokes(force: &StaggeredVelocity, tol: f64) -> Result<StaggeredVelocity> {
    Ok(stokes_solve(force, 1.0, tol)?.velocity)
}

pub fn stokes_solve_with(
    force: &StaggeredVelocity,
    gamma: f64,
    tol: f64,
    method: SolveMethod,
) -> Result<StokesSolution> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!("Stokes viscosity must be positive, got {gamma}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    let grid = force.grid();
    let fnorm = force.norm_l2();
    if force.is_zero() {
        return Ok(StokesSolution {
            velocity: StaggeredVelocity::zeros(grid),
            pressure: ScalarField::zeros(grid),
            report: LinearSolveReport {
                iterations: 0,
                residual: 0.0,
                method,
            },
            divergence_l2: 0.0,
        });
    }
    let ops = operators(grid);
    let (unit_velocity, pressure, iterations) = match method {
        SolveMethod::Capacitance => {
            let (v, p) = capacitance_solve(&ops, force);
            (v, p, 1)
        }
        SolveMethod::Uzawa => uzawa(&ops, force, tol, gamma)?,
        other => {
            return Err(Error::InvalidConfig(format!("{other:?} is not a Stokes method")));
        }
    };
    let velocity = unit_velocity.scaled(1.0 / gamma);

    let mut r = vector_laplacian(&velocity).scaled(-gamma);
    r.axpy(1.0, &gradient(&pressure));
    r.axpy(-1.0, force);
    let residual = r.norm_l2() / fnorm;
    let divergence_l2 = divergence(&velocity).norm_l2();
    if method == SolveMethod::Capacitance
        && !(residual <= tol && divergence_l2 <= tol * (1.0 + fnorm))
    {
        return Err(Error::NonConvergence {
            solver: "capacitance Stokes",
            iterations: 1,
            residual: residual.max(divergence_l2 / (1.0 + fnorm)),
        });
    }
    Ok(StokesSolution {
        velocity,
        pressure,
        report: LinearSolveReport {
            iterations,
            residual,
            method,
        },
        divergence_l2,
    })
}

fn interior_u(v: &StaggeredVelocity) -> ndarray::ArrayView2<'_, f64> {
    let nx = v.grid().nx();
    v.u().slice(s![1..nx, ..])
}

fn interior_w(v: &StaggeredVelocity) -> ndarray::ArrayView2<'_, f64> {
    let ny = v.grid().ny();
    v.w().slice(s![.., 1..ny])
}

fn assemble(grid: GridSpec, u_int: Array2<f64>, w_int: Array2<f64>) -> StaggeredVelocity {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut v = StaggeredVelocity::zeros(grid);
    v.u_mut().slice_mut(s![1..nx, ..]).assign(&u_int);
    v.w_mut().slice_mut(s![.., 1..ny]).assign(&w_int);
    v
}

/// Unit-viscosity Stokes solve with free-slip tangential walls.
fn free_slip_solve(ops: &GridOperators, f: &StaggeredVelocity) -> (StaggeredVelocity, ScalarField) {
    let grid = ops.grid;
    let div = divergence(f);
    let phi = ops.neumann.solve(div.values().view(), 0.0, -1.0);
    let phi = ScalarField::from_values(grid, phi).expect("grid shape");
    let mut pf = f.clone();
    pf.axpy(-1.0, &gradient(&phi));
    let u = ops.u_free.solve(interior_u(&pf), 0.0, 1.0);
    let w = ops.w_free.solve(interior_w(&pf), 0.0, 1.0);
    (assemble(grid, u, w), phi)
}

#[derive(Debug, Clone, Copy)]
enum Component {
    U,
    W,
}

#[derive(Debug, Clone, Copy)]
struct WallEntry {
    comp: Component,
    i: usize,
    j: usize,
    /// Extra diagonal of `-Δ_noslip` relative to `-Δ_freeslip`.
    sigma: f64,
}

impl WallEntry {
    fn get(&self, v: &StaggeredVelocity) -> f64 {
        match self.comp {
            Component::U => v.u()[[self.i, self.j]],
            Component::W => v.w()[[self.i, self.j]],
        }
    }

    fn add(&self, v: &mut StaggeredVelocity, a: f64) {
        match self.comp {
            Component::U => v.u_mut()[[self.i, self.j]] += a,
            Component::W => v.w_mut()[[self.i, self.j]] += a,
        }
    }
}

/// Woodbury correction data turning free-slip solves into no-slip solves.
pub(crate) struct Capacitance {
    entries: Vec<WallEntry>,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl std::fmt::Debug for Capacitance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Capacitance")
            .field("size", &self.entries.len())
            .finish()
    }
}

impl Capacitance {
    fn build(ops: &GridOperators) -> Capacitance {
        let g = ops.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let (sx, sy) = (2.0 / (g.hx() * g.hx()), 2.0 / (g.hy() * g.hy()));
        let mut entries = Vec::with_capacity(2 * (nx - 1) + 2 * (ny - 1));
        for i in 1..nx {
            for j in [0, ny - 1] {
                entries.push(WallEntry { comp: Component::U, i, j, sigma: sy });
            }
        }
        for j in 1..ny {
            for i in [0, nx - 1] {
                entries.push(WallEntry { comp: Component::W, i, j, sigma: sx });
            }
        }
        let m = entries.len();
        let mut c = DMatrix::<f64>::zeros(m, m);
        for (k, e) in entries.iter().enumerate() {
            let mut f = StaggeredVelocity::zeros(g);
            e.add(&mut f, 1.0);
            let (v, _) = free_slip_solve(ops, &f);
            for (l, el) in entries.iter().enumerate() {
                c[(l, k)] = el.get(&v);
            }
        }
        let c = (&c + c.transpose()) * 0.5;
        let mut c = c;
        for (k, e) in entries.iter().enumerate() {
            c[(k, k)] += 1.0 / e.sigma;
        }
        let factor = nalgebra::Cholesky::new(c).expect("capacitance matrix is SPD");
        Capacitance { entries, factor }
    }
}

fn capacitance_solve(ops: &GridOperators, f: &StaggeredVelocity) -> (StaggeredVelocity, ScalarField) {
    let cap = ops.capacitance.get_or_init(|| Capacitance::build(ops));
    let (v0, _) = free_slip_solve(ops, f);
    let b = DVector::from_iterator(cap.entries.len(), cap.entries.iter().map(|e| e.get(&v0)));
    let y = cap.factor.solve(&b);
    let mut f2 = f.clone();
    for (e, yk) in cap.entries.iter().zip(y.iter()) {
        e.add(&mut f2, -yk);
    }
    free_slip_solve(ops, &f2)
}

/// `(-Δ_noslip)⁻¹ g` component-wise.
fn noslip_inverse(ops: &GridOperators, g: &StaggeredVelocity) -> StaggeredVelocity {
    let u = ops.u_noslip.solve(interior_u(g), 0.0, 1.0);
    let w = ops.w_noslip.solve(interior_w(g), 0.0, 1.0);
    assemble(ops.grid, u, w)
}

fn remove_mean(p: &mut ScalarField) {
    let m = crate::grid::mean(p);
    p.values_mut().mapv_inplace(|v| v - m);
}

/// Unit-viscosity Uzawa CG; returns `(velocity, pressure, iterations)`.
fn uzawa(
    ops: &GridOperators,
    f: &StaggeredVelocity,
    tol: f64,
    gamma: f64,
) -> Result<(StaggeredVelocity, ScalarField, usize)> {
    let grid = ops.grid;
    let fnorm = f.norm_l2();
    let mut u = noslip_inverse(ops, f);
    let mut p = ScalarField::zeros(grid);
    // residual of the Schur system equals -div(u)
    let mut r = divergence(&u).scaled(-1.0);
    remove_mean(&mut r);
    let r0 = r.norm_l2();
    // velocity divergence after scaling by 1/γ must stay below tol·(1 + ‖f‖)
    let target = tol * r0.min(gamma * (1.0 + fnorm));
    if r0 <= target || r0 == 0.0 {
        return Ok((u, p, 0));
    }
    let mut d = r.clone();
    let mut rr = r.dot(&r);
    let cap = 10 * (grid.nx() + grid.ny());
    for it in 1..=cap {
        let ad = noslip_inverse(ops, &gradient(&d));
        let mut sd = divergence(&ad).scaled(-1.0);
        remove_mean(&mut sd);
        let alpha = rr / d.dot(&sd);
        p.axpy(alpha, &d);
        u.axpy(-alpha, &ad);
        r.axpy(-alpha, &sd);
        let rn = r.norm_l2();
        if rn <= target {
            remove_mean(&mut p);
            return Ok((u, p, it));
        }
        let rr_new = r.dot(&r);
        let beta = rr_new / rr;
        rr = rr_new;
        let mut dn = r.clone();
        dn.axpy(beta, &d);
        d = dn;
    }
    Err(Error::NonConvergence {
        solver: "Uzawa Stokes",
        iterations: cap,
        residual: r.norm_l2() / r0,
    })
}
