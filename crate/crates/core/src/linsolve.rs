//! Solvers for the shifted Neumann diffusion systems `(I - cΔ_N) u = f` that
//! appear in every implicit step, the adjoint, the feedback law and the
//! mix-norm.
//!
//! The default path is an exact fast-transform solve in the discrete cosine
//! basis. A preconditioned conjugate-gradient path is kept for cross-checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{laplacian_neumann, GridSpec, ScalarField};
use crate::spectral::operators;

/// Relative residual target for all scalar linear solves.
pub const DEFAULT_LINEAR_TOL: f64 = 1e-10;

/// `I - c·Δ_N` on a given grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HelmholtzOperator {
    grid: GridSpec,
    c: f64,
}

impl HelmholtzOperator {
    pub fn new(grid: GridSpec, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "Helmholtz coefficient must be finite and nonnegative, got {c}"
            )));
        }
        Ok(HelmholtzOperator { grid, c })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn coefficient(&self) -> f64 {
        self.c
    }

    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        let mut out = u.clone();
        if self.c != 0.0 {
            out.axpy(-1.0, &laplacian_neumann(u, self.c));
        }
        out
    }

    /// Iteration cap for the Krylov path.
    pub fn iteration_cap(&self) -> usize {
        10 * (self.grid.nx() + self.grid.ny())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    /// Direct solve in the cosine eigenbasis.
    Spectral,
    /// Conjugate gradients with a Jacobi preconditioner.
    PcgJacobi,
    /// Conjugate gradients preconditioned by the spectral solve.
    PcgSpectral,
    /// Uzawa conjugate gradients on the Stokes pressure Schur complement.
    Uzawa,
    /// Direct Stokes solve: free-slip transform solve plus a boundary capacitance correction.
    Capacitance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub method: SolveMethod,
}

pub fn helmholtz_solve(
    op: &HelmholtzOperator,
    rhs: &ScalarField,
    tol: f64,
) -> Result<(ScalarField, LinearSolveReport)> {
    helmholtz_solve_with(op, rhs, tol, SolveMethod::Spectral)
}

pub fn helmholtz_solve_with(
    op: &HelmholtzOperator,
    rhs: &ScalarField,
    tol: f64,
    method: SolveMethod,
) -> Result<(ScalarField, LinearSolveReport)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    if rhs.grid() != op.grid {
        return Err(Error::ShapeMismatch("Helmholtz operator and rhs grids differ".into()));
    }
    if op.c == 0.0 {
        return Ok((
            rhs.clone(),
            LinearSolveReport {
                iterations: 0,
                residual: 0.0,
                method,
            },
        ));
    }
    match method {
        SolveMethod::Spectral => {
            let u = spectral_apply_inverse(op, rhs);
            let residual = relative_residual(op, &u, rhs);
            if !(residual <= tol) {
                return Err(Error::NonConvergence {
                    solver: "spectral Helmholtz",
                    iterations: 1,
                    residual,
                });
            }
            Ok((
                u,
                LinearSolveReport {
                    iterations: 1,
                    residual,
                    method,
                },
            ))
        }
        SolveMethod::PcgJacobi | SolveMethod::PcgSpectral => {
            pcg(op, rhs, tol, method, op.iteration_cap())
        }
        SolveMethod::Uzawa | SolveMethod::Capacitance => Err(Error::InvalidConfig(format!(
            "{method:?} is a Stokes method, not a Helmholtz method"
        ))),
    }
}

fn spectral_apply_inverse(op: &HelmholtzOperator, rhs: &ScalarField) -> ScalarField {
    let ops = operators(op.grid);
    let u = ops.neumann.solve(rhs.values().view(), 1.0, op.c);
    ScalarField::from_values(op.grid, u).expect("spectral solve keeps the grid shape")
}

fn relative_residual(op: &HelmholtzOperator, u: &ScalarField, rhs: &ScalarField) -> f64 {
    let mut r = op.apply(u);
    r.axpy(-1.0, rhs);
    let denom = rhs.norm_l2();
    if denom == 0.0 {
        r.norm_l2()
    } else {
        r.norm_l2() / denom
    }
}

fn pcg(
    op: &HelmholtzOperator,
    rhs: &ScalarField,
    tol: f64,
    method: SolveMethod,
    cap: usize,
) -> Result<(ScalarField, LinearSolveReport)> {
    let g = op.grid;
    let bnorm = rhs.norm_l2();
    let mut x = ScalarField::zeros(g);
    if bnorm == 0.0 {
        return Ok((
            x,
            LinearSolveReport {
                iterations: 0,
                residual: 0.0,
                method,
            },
        ));
    }
    let diag = {
        let (cx, cy) = (op.c / (g.hx() * g.hx()), op.c / (g.hy() * g.hy()));
        let (nx, ny) = (g.nx(), g.ny());
        ndarray::Array2::from_shape_fn((nx, ny), |(i, j)| {
            let mut d = 1.0;
            d += cx * ((i > 0) as u8 + (i + 1 < nx) as u8) as f64;
            d += cy * ((j > 0) as u8 + (j + 1 < ny) as u8) as f64;
            d
        })
    };
    let precondition = |r: &ScalarField| -> ScalarField {
        match method {
            SolveMethod::PcgSpectral => spectral_apply_inverse(op, r),
            _ => ScalarField::from_values(g, r.values() / &diag).expect("same grid"),
        }
    };
    let mut r = rhs.clone();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 1..=cap {
        let ap = op.apply(&p);
        let alpha = rz / p.dot(&ap);
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let res = r.norm_l2() / bnorm;
        if res <= tol {
            return Ok((
                x,
                LinearSolveReport {
                    iterations: it,
                    residual: res,
                    method,
                },
            ));
        }
        z = precondition(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        let mut pn = z.clone();
        pn.axpy(beta, &p);
        p = pn;
    }
    Err(Error::NonConvergence {
        solver: "Helmholtz PCG",
        iterations: cap,
        residual: r.norm_l2() / bnorm,
    })
}
