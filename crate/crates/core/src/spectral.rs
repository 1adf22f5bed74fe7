//! Separable fast-transform solvers for constant-coefficient operators of the
//! form `s·I + c·(-Δ_h)` on tensor-product grids.
//!
//! Each 1D second-difference operator is diagonalised by a closed-form
//! orthonormal basis (discrete cosine or sine vectors). A 2D solve is then
//! `U = Qx · (Qxᵀ F Qy ./ Λ) · Qyᵀ`, four dense products per solve.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use ndarray::{Array2, ArrayView2};
use once_cell::sync::{Lazy, OnceCell};

use crate::grid::GridSpec;

/// Boundary treatment of a 1D second-difference operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Axis1D {
    /// `n` cell-centred unknowns with mirror ghosts (homogeneous Neumann); cosine basis.
    NeumannCells,
    /// `n - 1` interior node unknowns with zero end values; sine basis.
    DirichletNodes,
    /// `n` cell-centred unknowns with reflection ghosts (zero at the wall); shifted sine basis.
    OddCells,
}

/// Orthonormal eigenbasis (columns of `q`) and eigenvalues of `-D2`.
#[derive(Debug, Clone)]
pub(crate) struct Basis1D {
    pub q: Array2<f64>,
    pub eig: Vec<f64>,
}

impl Basis1D {
    pub fn new(kind: Axis1D, ncells: usize, h: f64) -> Self {
        let n = ncells as f64;
        let lam = |k: usize| 4.0 / (h * h) * (k as f64 * PI / (2.0 * n)).sin().powi(2);
        let (dim, modes): (usize, Vec<usize>) = match kind {
            Axis1D::NeumannCells => (ncells, (0..ncells).collect()),
            Axis1D::DirichletNodes => (ncells - 1, (1..ncells).collect()),
            Axis1D::OddCells => (ncells, (1..=ncells).collect()),
        };
        let mut q = Array2::from_shape_fn((dim, dim), |(j, m)| {
            let k = modes[m] as f64;
            match kind {
                Axis1D::NeumannCells => (k * PI * (j as f64 + 0.5) / n).cos(),
                Axis1D::DirichletNodes => (k * PI * (j as f64 + 1.0) / n).sin(),
                Axis1D::OddCells => (k * PI * (j as f64 + 0.5) / n).sin(),
            }
        });
        for mut col in q.columns_mut() {
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            col.mapv_inplace(|v| v / norm);
        }
        let eig = modes.iter().map(|&k| lam(k)).collect();
        Basis1D { q, eig }
    }

    pub fn dim(&self) -> usize {
        self.eig.len()
    }
}

/// Tensor product of two 1D bases.
#[derive(Debug, Clone)]
pub(crate) struct Separable2D {
    pub bx: Basis1D,
    pub by: Basis1D,
}

impl Separable2D {
    pub fn new(kx: Axis1D, ky: Axis1D, grid: GridSpec) -> Self {
        Separable2D {
            bx: Basis1D::new(kx, grid.nx(), grid.hx()),
            by: Basis1D::new(ky, grid.ny(), grid.hy()),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bx.dim(), self.by.dim())
    }

    /// Solves `(shift·I + c·(-Δ_h)) u = rhs`. Modes with a zero symbol are
    /// set to zero (used for the singular pure-Neumann Poisson problem).
    pub fn solve(&self, rhs: ArrayView2<f64>, shift: f64, c: f64) -> Array2<f64> {
        debug_assert_eq!(rhs.dim(), self.shape());
        let mut hat = self.bx.q.t().dot(&rhs).dot(&self.by.q);
        for (i, mut row) in hat.rows_mut().into_iter().enumerate() {
            let ex = self.bx.eig[i];
            for (j, v) in row.iter_mut().enumerate() {
                let d = shift + c * (ex + self.by.eig[j]);
                *v = if d == 0.0 { 0.0 } else { *v / d };
            }
        }
        self.bx.q.dot(&hat).dot(&self.by.q.t())
    }
}

/// Transform bases for one grid, built once and shared read-only.
#[derive(Debug)]
pub(crate) struct GridOperators {
    pub grid: GridSpec,
    /// Cell-centred scalars, Neumann both ways.
    pub neumann: Separable2D,
    /// `u` on interior x-faces with no-slip (odd) walls in y.
    pub u_noslip: Separable2D,
    /// `w` on interior y-faces with no-slip walls in x.
    pub w_noslip: Separable2D,
    /// `u` with free-slip (mirror) walls in y; commutes with the MAC gradient.
    pub u_free: Separable2D,
    pub w_free: Separable2D,
    pub capacitance: OnceCell<crate::stokes::Capacitance>,
}

impl GridOperators {
    fn new(grid: GridSpec) -> Self {
        use Axis1D::*;
        GridOperators {
            grid,
            neumann: Separable2D::new(NeumannCells, NeumannCells, grid),
            u_noslip: Separable2D::new(DirichletNodes, OddCells, grid),
            w_noslip: Separable2D::new(OddCells, DirichletNodes, grid),
            u_free: Separable2D::new(DirichletNodes, NeumannCells, grid),
            w_free: Separable2D::new(NeumannCells, DirichletNodes, grid),
            capacitance: OnceCell::new(),
        }
    }
}

static CACHE: Lazy<Mutex<HashMap<GridSpec, Arc<GridOperators>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Shared operator data for `grid`, created on first use.
pub(crate) fn operators(grid: GridSpec) -> Arc<GridOperators> {
    let mut map = CACHE.lock().expect("operator cache poisoned");
    map.entry(grid)
        .or_insert_with(|| Arc::new(GridOperators::new(grid)))
        .clone()
}
