//! Staggered (MAC) grid data model on the unit square and the discrete
//! operators shared by every solver.
//!
//! Layout for an `nx × ny` grid with spacings `hx = 1/nx`, `hy = 1/ny`:
//!
//! - scalars (temperature, adjoint, pressure) at cell centres
//!   `((i+½)hx, (j+½)hy)`, stored as an `(nx, ny)` array indexed `[i, j]`;
//! - x-velocity `u` on vertical faces `(i·hx, (j+½)hy)`, array `(nx+1, ny)`;
//! - y-velocity `w` on horizontal faces `((i+½)hx, j·hy)`, array `(nx, ny+1)`.
//!
//! Faces on the boundary carry the normal velocity component and are held at
//! exactly zero. Homogeneous Neumann conditions for scalars use mirror ghost
//! cells; the tangential no-slip condition for velocity uses reflection ghosts
//! (`ghost = -interior`).
//!
//! All inner products are weighted by the cell area `hx·hy`, so they are
//! midpoint-rule approximations of the continuous `L²(Ω)` products.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell counts of a uniform grid on `(0,1)²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid needs at least 2 cells per direction, got {nx}x{ny}"
            )));
        }
        Ok(GridSpec { nx, ny })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    #[inline]
    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx()
    }

    #[inline]
    pub fn y_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy()
    }

    #[inline]
    pub fn x_face(&self, i: usize) -> f64 {
        i as f64 * self.hx()
    }

    #[inline]
    pub fn y_face(&self, j: usize) -> f64 {
        j as f64 * self.hy()
    }

    /// Grid with both cell counts doubled.
    pub fn refined(&self) -> GridSpec {
        GridSpec {
            nx: 2 * self.nx,
            ny: 2 * self.ny,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Number of velocity degrees of freedom including the (zero) boundary faces.
    pub fn face_count(&self) -> usize {
        (self.nx + 1) * self.ny + self.nx * (self.ny + 1)
    }
}

/// Uniform time grid on `[0, t_final]` with `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_final: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("time grid needs at least one step".into()));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        Ok(TimeGrid { t_final, steps })
    }

    #[inline]
    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn refined(&self) -> TimeGrid {
        TimeGrid {
            t_final: self.t_final,
            steps: 2 * self.steps,
        }
    }

    /// Index of the node closest to `t` (clamped to the grid).
    pub fn nearest_node(&self, t: f64) -> usize {
        let k = (t / self.dt()).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.steps)
        }
    }
}

/// Cell-centred grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Array2<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField {
            grid,
            values: Array2::zeros((grid.nx, grid.ny)),
        }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        ScalarField {
            grid,
            values: Array2::from_elem((grid.nx, grid.ny), c),
        }
    }

    /// Samples `f(x, y)` at the cell centres.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let values =
            Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| f(grid.x_center(i), grid.y_center(j)));
        ScalarField { grid, values }
    }

    pub fn from_values(grid: GridSpec, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.nx, grid.ny) {
            return Err(Error::ShapeMismatch(format!(
                "scalar field needs shape ({}, {}), got {:?}",
                grid.nx,
                grid.ny,
                values.dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("scalar field has non-finite entries".into()));
        }
        Ok(ScalarField { grid, values })
    }

    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: &self.values * c,
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ScalarField) {
        debug_assert_eq!(self.grid, x.grid);
        self.values.scaled_add(a, &x.values);
    }

    pub fn dot(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.grid.cell_area()
            * self
                .values
                .iter()
                .zip(other.values.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// MAC face-centred velocity field.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredVelocity {
    grid: GridSpec,
    u: Array2<f64>,
    w: Array2<f64>,
}

impl StaggeredVelocity {
    pub fn zeros(grid: GridSpec) -> Self {
        StaggeredVelocity {
            grid,
            u: Array2::zeros((grid.nx + 1, grid.ny)),
            w: Array2::zeros((grid.nx, grid.ny + 1)),
        }
    }

    /// Samples `(fu, fw)` at the face centres; boundary-normal faces are set to zero.
    pub fn from_fns(
        grid: GridSpec,
        fu: impl Fn(f64, f64) -> f64,
        fw: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let u = Array2::from_shape_fn((grid.nx + 1, grid.ny), |(i, j)| {
            if i == 0 || i == grid.nx {
                0.0
            } else {
                fu(grid.x_face(i), grid.y_center(j))
            }
        });
        let w = Array2::from_shape_fn((grid.nx, grid.ny + 1), |(i, j)| {
            if j == 0 || j == grid.ny {
                0.0
            } else {
                fw(grid.x_center(i), grid.y_face(j))
            }
        });
        StaggeredVelocity { grid, u, w }
    }

    pub fn from_components(grid: GridSpec, u: Array2<f64>, w: Array2<f64>) -> Result<Self> {
        if u.dim() != (grid.nx + 1, grid.ny) || w.dim() != (grid.nx, grid.ny + 1) {
            return Err(Error::ShapeMismatch(format!(
                "velocity components need shapes ({}, {}) and ({}, {}), got {:?} and {:?}",
                grid.nx + 1,
                grid.ny,
                grid.nx,
                grid.ny + 1,
                u.dim(),
                w.dim()
            )));
        }
        if u.iter().chain(w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("velocity has non-finite entries".into()));
        }
        let mut v = StaggeredVelocity { grid, u, w };
        let normal_max = v.boundary_normal_max();
        if normal_max != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "velocity boundary-normal faces must be zero (max |value| = {normal_max:.3e})"
            )));
        }
        v.zero_boundary_normal();
        Ok(v)
    }

    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    #[inline]
    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    #[inline]
    pub fn u_mut(&mut self) -> &mut Array2<f64> {
        &mut self.u
    }

    #[inline]
    pub fn w_mut(&mut self) -> &mut Array2<f64> {
        &mut self.w
    }

    pub fn zero_boundary_normal(&mut self) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        for j in 0..ny {
            self.u[[0, j]] = 0.0;
            self.u[[nx, j]] = 0.0;
        }
        for i in 0..nx {
            self.w[[i, 0]] = 0.0;
            self.w[[i, ny]] = 0.0;
        }
    }

    fn boundary_normal_max(&self) -> f64 {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut m = 0.0_f64;
        for j in 0..ny {
            m = m.max(self.u[[0, j]].abs()).max(self.u[[nx, j]].abs());
        }
        for i in 0..nx {
            m = m.max(self.w[[i, 0]].abs()).max(self.w[[i, ny]].abs());
        }
        m
    }

    pub fn scaled(&self, c: f64) -> StaggeredVelocity {
        StaggeredVelocity {
            grid: self.grid,
            u: &self.u * c,
            w: &self.w * c,
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &StaggeredVelocity) {
        debug_assert_eq!(self.grid, x.grid);
        self.u.scaled_add(a, &x.u);
        self.w.scaled_add(a, &x.w);
    }

    pub fn dot(&self, other: &StaggeredVelocity) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let su: f64 = self.u.iter().zip(other.u.iter()).map(|(a, b)| a * b).sum();
        let sw: f64 = self.w.iter().zip(other.w.iter()).map(|(a, b)| a * b).sum();
        self.grid.cell_area() * (su + sw)
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(self.w.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(self.w.iter()).all(|v| *v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.w.iter()).all(|v| v.is_finite())
    }

    /// Squared discrete gradient seminorm `⟨-Δ_h v, v⟩` under the no-slip
    /// vector Laplacian (see [`vector_laplacian`]).
    pub fn h1_seminorm_sq(&self) -> f64 {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let (hx2, hy2) = (g.hx() * g.hx(), g.hy() * g.hy());
        let mut s = 0.0;
        // u: x-differences across every cell (boundary faces are zero)
        for i in 0..nx {
            for j in 0..ny {
                let d = self.u[[i + 1, j]] - self.u[[i, j]];
                s += d * d / hx2;
            }
        }
        for i in 1..nx {
            for j in 0..ny - 1 {
                let d = self.u[[i, j + 1]] - self.u[[i, j]];
                s += d * d / hy2;
            }
            s += 2.0 * (self.u[[i, 0]].powi(2) + self.u[[i, ny - 1]].powi(2)) / hy2;
        }
        // w
        for i in 0..nx {
            for j in 0..ny {
                let d = self.w[[i, j + 1]] - self.w[[i, j]];
                s += d * d / hy2;
            }
        }
        for j in 1..ny {
            for i in 0..nx - 1 {
                let d = self.w[[i + 1, j]] - self.w[[i, j]];
                s += d * d / hx2;
            }
            s += 2.0 * (self.w[[0, j]].powi(2) + self.w[[nx - 1, j]].powi(2)) / hx2;
        }
        g.cell_area() * s
    }

    /// Bilinear form `⟨-Δ_h a, b⟩` (symmetric); equals [`Self::h1_seminorm_sq`] on the diagonal.
    pub fn h1_inner(&self, other: &StaggeredVelocity) -> f64 {
        let lap = vector_laplacian(other);
        -self.dot(&lap)
    }
}

/// Spatial mean with |Ω| = 1 (midpoint quadrature).
pub fn mean(f: &ScalarField) -> f64 {
    f.grid.cell_area() * f.values.sum()
}

/// `Df = f - ⟨f⟩`
pub fn deviation(f: &ScalarField) -> ScalarField {
    let m = mean(f);
    ScalarField {
        grid: f.grid,
        values: f.values.mapv(|v| v - m),
    }
}

/// `coeff · Δ_h f` with homogeneous Neumann conditions (5-point stencil, mirror ghosts).
pub fn laplacian_neumann(f: &ScalarField, coeff: f64) -> ScalarField {
    let g = f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let cx = coeff / (g.hx() * g.hx());
    let cy = coeff / (g.hy() * g.hy());
    let v = &f.values;
    let out = Array2::from_shape_fn((nx, ny), |(i, j)| {
        let c = v[[i, j]];
        let mut s = 0.0;
        if i > 0 {
            s += cx * (v[[i - 1, j]] - c);
        }
        if i + 1 < nx {
            s += cx * (v[[i + 1, j]] - c);
        }
        if j > 0 {
            s += cy * (v[[i, j - 1]] - c);
        }
        if j + 1 < ny {
            s += cy * (v[[i, j + 1]] - c);
        }
        s
    });
    ScalarField { grid: g, values: out }
}

/// Cell-centred MAC divergence `∂u/∂x + ∂w/∂y`.
pub fn divergence(vel: &StaggeredVelocity) -> ScalarField {
    let g = vel.grid;
    let (hx, hy) = (g.hx(), g.hy());
    let out = Array2::from_shape_fn((g.nx, g.ny), |(i, j)| {
        (vel.u[[i + 1, j]] - vel.u[[i, j]]) / hx + (vel.w[[i, j + 1]] - vel.w[[i, j]]) / hy
    });
    ScalarField { grid: g, values: out }
}

/// Discrete gradient of a cell-centred field onto interior faces (boundary faces zero).
/// Satisfies `⟨gradient(p), v⟩ = -⟨p, divergence(v)⟩`.
pub fn gradient(p: &ScalarField) -> StaggeredVelocity {
    let g = p.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let pv = &p.values;
    let u = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
        if i == 0 || i == nx {
            0.0
        } else {
            (pv[[i, j]] - pv[[i - 1, j]]) / hx
        }
    });
    let w = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
        if j == 0 || j == ny {
            0.0
        } else {
            (pv[[i, j]] - pv[[i, j - 1]]) / hy
        }
    });
    StaggeredVelocity { grid: g, u, w }
}

/// Advective term `v·∇f` at cell centres: the centred difference of `f` across
/// each face is multiplied by the face velocity, then the two faces of each
/// cell are averaged per direction.
pub fn advect(vel: &StaggeredVelocity, f: &ScalarField) -> ScalarField {
    let g = f.grid;
    debug_assert_eq!(g, vel.grid);
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let v = &f.values;
    let (u, w) = (&vel.u, &vel.w);
    let out = Array2::from_shape_fn((nx, ny), |(i, j)| {
        let c = v[[i, j]];
        // mirror ghosts make the boundary-face differences vanish
        let dw = if i > 0 { c - v[[i - 1, j]] } else { 0.0 };
        let de = if i + 1 < nx { v[[i + 1, j]] - c } else { 0.0 };
        let ds = if j > 0 { c - v[[i, j - 1]] } else { 0.0 };
        let dn = if j + 1 < ny { v[[i, j + 1]] - c } else { 0.0 };
        0.5 * (u[[i, j]] * dw + u[[i + 1, j]] * de) / hx
            + 0.5 * (w[[i, j]] * ds + w[[i, j + 1]] * dn) / hy
    });
    ScalarField { grid: g, values: out }
}

/// Exact transpose of `f ↦ advect(vel, f)` in the cell-area inner product.
/// Equals `-advect(vel, g) - divergence(vel)·g`, so it reduces to
/// `-advect(vel, g)` for discretely divergence-free `vel`.
pub fn advect_transpose(vel: &StaggeredVelocity, gf: &ScalarField) -> ScalarField {
    let g = gf.grid;
    debug_assert_eq!(g, vel.grid);
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let v = &gf.values;
    let (u, w) = (&vel.u, &vel.w);
    let out = Array2::from_shape_fn((nx, ny), |(i, j)| {
        let c = v[[i, j]];
        let mut s = 0.0;
        if i > 0 {
            s += 0.5 * u[[i, j]] * (v[[i - 1, j]] + c) / hx;
        }
        if i + 1 < nx {
            s -= 0.5 * u[[i + 1, j]] * (c + v[[i + 1, j]]) / hx;
        }
        if j > 0 {
            s += 0.5 * w[[i, j]] * (v[[i, j - 1]] + c) / hy;
        }
        if j + 1 < ny {
            s -= 0.5 * w[[i, j + 1]] * (c + v[[i, j + 1]]) / hy;
        }
        s
    });
    ScalarField { grid: g, values: out }
}

/// MAC body force `q∇T`: on each interior face, the centred difference of `T`
/// across the face times the two-cell average of `q`. This is the face-space
/// representer of `h ↦ ⟨q, advect(h, T)⟩`.
pub fn face_force(q: &ScalarField, t: &ScalarField) -> StaggeredVelocity {
    let g = t.grid;
    debug_assert_eq!(g, q.grid);
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let (qv, tv) = (&q.values, &t.values);
    let u = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
        if i == 0 || i == nx {
            0.0
        } else {
            0.5 * (qv[[i - 1, j]] + qv[[i, j]]) * (tv[[i, j]] - tv[[i - 1, j]]) / hx
        }
    });
    let w = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
        if j == 0 || j == ny {
            0.0
        } else {
            0.5 * (qv[[i, j - 1]] + qv[[i, j]]) * (tv[[i, j]] - tv[[i, j - 1]]) / hy
        }
    });
    StaggeredVelocity { grid: g, u, w }
}

/// Vector Laplacian of a MAC field with no-slip walls: normal components are
/// zero on the boundary faces, tangential components use reflection ghosts.
/// Boundary-normal faces of the result are zero.
pub fn vector_laplacian(vel: &StaggeredVelocity) -> StaggeredVelocity {
    let g = vel.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (ihx2, ihy2) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let (u, w) = (&vel.u, &vel.w);
    let lu = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
        if i == 0 || i == nx {
            return 0.0;
        }
        let c = u[[i, j]];
        let lx = (u[[i + 1, j]] - 2.0 * c + u[[i - 1, j]]) * ihx2;
        let s = if j > 0 { u[[i, j - 1]] } else { -c };
        let n = if j + 1 < ny { u[[i, j + 1]] } else { -c };
        lx + (s - 2.0 * c + n) * ihy2
    });
    let lw = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
        if j == 0 || j == ny {
            return 0.0;
        }
        let c = w[[i, j]];
        let ly = (w[[i, j + 1]] - 2.0 * c + w[[i, j - 1]]) * ihy2;
        let west = if i > 0 { w[[i - 1, j]] } else { -c };
        let east = if i + 1 < nx { w[[i + 1, j]] } else { -c };
        ly + (west - 2.0 * c + east) * ihx2
    });
    StaggeredVelocity { grid: g, u: lu, w: lw }
}

/// Linear interpolation weights along one axis: for each fine sample, the
/// lower coarse index and the weight of the upper neighbour. Samples outside
/// the coarse span are linearly extrapolated from the nearest pair.
fn axis_weights(
    n_fine: usize,
    fine_pos: impl Fn(usize) -> f64,
    n_coarse: usize,
    coarse_pos: impl Fn(usize) -> f64,
) -> Vec<(usize, f64)> {
    let c0 = coarse_pos(0);
    let step = coarse_pos(1) - c0;
    (0..n_fine)
        .map(|i| {
            let s = (fine_pos(i) - c0) / step;
            let k = (s.floor().max(0.0) as usize).min(n_coarse - 2);
            (k, s - k as f64)
        })
        .collect()
}

fn interp_2d(
    coarse: &Array2<f64>,
    wx: &[(usize, f64)],
    wy: &[(usize, f64)],
) -> Array2<f64> {
    Array2::from_shape_fn((wx.len(), wy.len()), |(i, j)| {
        let (k, a) = wx[i];
        let (l, b) = wy[j];
        (1.0 - a) * ((1.0 - b) * coarse[[k, l]] + b * coarse[[k, l + 1]])
            + a * ((1.0 - b) * coarse[[k + 1, l]] + b * coarse[[k + 1, l + 1]])
    })
}

fn check_refinement(coarse: GridSpec, fine: GridSpec) -> Result<()> {
    let ok = |c: usize, f: usize| f == c || f == 2 * c;
    if ok(coarse.nx, fine.nx) && ok(coarse.ny, fine.ny) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "prolongation needs a doubling (or identity) per direction, got {}x{} -> {}x{}",
            coarse.nx, coarse.ny, fine.nx, fine.ny
        )))
    }
}

/// Bilinear prolongation of a cell-centred field.
pub fn prolong_scalar(f: &ScalarField, fine: GridSpec) -> Result<ScalarField> {
    let c = f.grid;
    check_refinement(c, fine)?;
    let wx = axis_weights(fine.nx, |i| fine.x_center(i), c.nx, |k| c.x_center(k));
    let wy = axis_weights(fine.ny, |j| fine.y_center(j), c.ny, |k| c.y_center(k));
    Ok(ScalarField {
        grid: fine,
        values: interp_2d(&f.values, &wx, &wy),
    })
}

/// Component-wise bilinear prolongation of a MAC velocity on its native face locations.
pub fn prolong_velocity(v: &StaggeredVelocity, fine: GridSpec) -> Result<StaggeredVelocity> {
    let c = v.grid;
    check_refinement(c, fine)?;
    let ux = axis_weights(fine.nx + 1, |i| fine.x_face(i), c.nx + 1, |k| c.x_face(k));
    let uy = axis_weights(fine.ny, |j| fine.y_center(j), c.ny, |k| c.y_center(k));
    let wx = axis_weights(fine.nx, |i| fine.x_center(i), c.nx, |k| c.x_center(k));
    let wy = axis_weights(fine.ny + 1, |j| fine.y_face(j), c.ny + 1, |k| c.y_face(k));
    let mut out = StaggeredVelocity {
        grid: fine,
        u: interp_2d(&v.u, &ux, &uy),
        w: interp_2d(&v.w, &wx, &wy),
    };
    out.zero_boundary_normal();
    Ok(out)
}

/// 2×2 cell averaging onto a grid with half the cells per direction.
pub fn restrict_scalar(f: &ScalarField, coarse: GridSpec) -> Result<ScalarField> {
    let g = f.grid;
    if g.nx != 2 * coarse.nx || g.ny != 2 * coarse.ny {
        return Err(Error::ShapeMismatch(format!(
            "restriction needs a halving, got {}x{} -> {}x{}",
            g.nx, g.ny, coarse.nx, coarse.ny
        )));
    }
    let v = &f.values;
    let values = Array2::from_shape_fn((coarse.nx, coarse.ny), |(i, j)| {
        0.25 * (v[[2 * i, 2 * j]] + v[[2 * i + 1, 2 * j]] + v[[2 * i, 2 * j + 1]] + v[[2 * i + 1, 2 * j + 1]])
    });
    Ok(ScalarField { grid: coarse, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(grid: GridSpec, rng: &mut ChaCha8Rng) -> ScalarField {
        let vals = Array2::from_shape_fn((grid.nx(), grid.ny()), |_| rng.random_range(-1.0..1.0));
        ScalarField::from_values(grid, vals).unwrap()
    }

    fn random_velocity(grid: GridSpec, rng: &mut ChaCha8Rng) -> StaggeredVelocity {
        let mut v = StaggeredVelocity::zeros(grid);
        v.u_mut().mapv_inplace(|_| rng.random_range(-1.0..1.0));
        v.w_mut().mapv_inplace(|_| rng.random_range(-1.0..1.0));
        v.zero_boundary_normal();
        v
    }

    /// Discrete curl of a nodal stream function that vanishes on the boundary.
    fn curl_of_nodal(grid: GridSpec, psi: impl Fn(f64, f64) -> f64) -> StaggeredVelocity {
        let (nx, ny) = (grid.nx(), grid.ny());
        let (hx, hy) = (grid.hx(), grid.hy());
        let node = |i: usize, j: usize| {
            if i == 0 || j == 0 || i == nx || j == ny {
                0.0
            } else {
                psi(i as f64 * hx, j as f64 * hy)
            }
        };
        let u = Array2::from_shape_fn((nx + 1, ny), |(i, j)| (node(i, j + 1) - node(i, j)) / hy);
        let w = Array2::from_shape_fn((nx, ny + 1), |(i, j)| -(node(i + 1, j) - node(i, j)) / hx);
        StaggeredVelocity::from_components(grid, u, w).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate() {
        assert!(GridSpec::new(1, 5).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let g = GridSpec::new(7, 3).unwrap();
        assert!((g.hx() * 7.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_of_constant_and_linear() {
        let g = GridSpec::square(160).unwrap();
        assert!((mean(&ScalarField::constant(g, 3.5)) - 3.5).abs() < 1e-13);
        let f = ScalarField::from_fn(g, |x, _| x);
        assert!((mean(&f) - 0.5).abs() < 1e-13);
    }

    #[test]
    fn mean_of_indicator_counts_cells() {
        let g = GridSpec::square(160).unwrap();
        let f = ScalarField::from_fn(g, |x, y| {
            if (x < 0.5 && y < 0.5) || (x > 0.5 && y > 0.5) {
                10.0
            } else {
                0.0
            }
        });
        let hot = f.values().iter().filter(|v| **v == 10.0).count();
        assert_eq!(hot, 160 * 160 / 2);
        assert!((mean(&f) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn deviation_is_projection() {
        let g = GridSpec::new(13, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(g, &mut rng);
        let d = deviation(&f);
        assert!(mean(&d).abs() < 1e-12 * f.norm_inf());
        let dd = deviation(&d);
        assert!((&dd.values - &d.values).iter().all(|e| e.abs() < 1e-14));
        assert!(deviation(&ScalarField::constant(g, 2.0)).norm_inf() < 1e-15);
        let lin = deviation(&ScalarField::from_fn(g, |x, _| x));
        for i in 0..13 {
            assert!((lin.values()[[i, 4]] - (g.x_center(i) - 0.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn neumann_laplacian_properties() {
        let g = GridSpec::new(12, 17).unwrap();
        assert!(laplacian_neumann(&ScalarField::constant(g, 4.0), 1.0).norm_inf() == 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_field(g, &mut rng);
        let h = random_field(g, &mut rng);
        let a = laplacian_neumann(&f, 1.0).dot(&h);
        let b = f.dot(&laplacian_neumann(&h, 1.0));
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        assert!(f.dot(&laplacian_neumann(&f, 1.0)) <= 0.0);
    }

    #[test]
    fn neumann_laplacian_cosine_mode_second_order() {
        let mut errs = vec![];
        for n in [20, 40, 80] {
            let g = GridSpec::square(n).unwrap();
            let f = ScalarField::from_fn(g, |x, _| (PI * x).cos());
            let lap = laplacian_neumann(&f, 1.0);
            let exact = ScalarField::from_fn(g, |x, _| -PI * PI * (PI * x).cos());
            let mut e = lap.clone();
            e.axpy(-1.0, &exact);
            errs.push(e.norm_inf());
        }
        for k in 0..2 {
            let r = errs[k] / errs[k + 1];
            assert!(r > 3.5 && r < 4.5, "ratio {r}");
        }
    }

    #[test]
    fn divergence_cases() {
        let g = GridSpec::new(10, 8).unwrap();
        assert_eq!(divergence(&StaggeredVelocity::zeros(g)).norm_inf(), 0.0);
        let v = StaggeredVelocity::from_fns(g, |_, _| 1.0, |_, _| 0.0);
        let d = divergence(&v);
        for i in 0..10 {
            for j in 0..8 {
                let val = d.values()[[i, j]];
                if i == 0 || i == 9 {
                    assert!(val.abs() > 1.0);
                } else {
                    assert_eq!(val, 0.0);
                }
            }
        }
        let c = curl_of_nodal(g, |x, y| (3.0 * x).sin() * (2.0 * y + 0.3).cos() + x * y);
        assert!(divergence(&c).norm_inf() < 1e-12);
    }

    #[test]
    fn gradient_is_negative_divergence_transpose() {
        let g = GridSpec::new(9, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_field(g, &mut rng);
        let v = random_velocity(g, &mut rng);
        let a = gradient(&p).dot(&v);
        let b = -p.dot(&divergence(&v));
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        // divergence of gradient is the Neumann Laplacian
        let dg = divergence(&gradient(&p));
        let lp = laplacian_neumann(&p, 1.0);
        assert!((&dg.values - &lp.values).iter().all(|e| e.abs() < 1e-9));
    }

    #[test]
    fn advect_cases() {
        let g = GridSpec::new(10, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_field(g, &mut rng);
        let v = random_velocity(g, &mut rng);
        assert_eq!(advect(&StaggeredVelocity::zeros(g), &f).norm_inf(), 0.0);
        assert!(advect(&v, &ScalarField::constant(g, 3.0)).norm_inf() < 1e-12);
        let c = curl_of_nodal(g, |x, y| (x * (1.0 - x) * y * (1.0 - y)).powi(2) * 50.0 + (x * y).sin());
        let total = advect(&c, &f).dot(&ScalarField::constant(g, 1.0));
        assert!(total.abs() < 1e-12 * f.norm_inf() * c.max_abs());
    }

    #[test]
    fn advect_transpose_is_exact() {
        let g = GridSpec::new(8, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_velocity(g, &mut rng);
        let f = random_field(g, &mut rng);
        let h = random_field(g, &mut rng);
        let a = advect(&v, &f).dot(&h);
        let b = f.dot(&advect_transpose(&v, &h));
        assert!((a - b).abs() < 1e-11 * a.abs().max(1.0));
        // A + A^T = -div(v)
        let mut s = advect(&v, &h);
        s.axpy(1.0, &advect_transpose(&v, &h));
        let d = divergence(&v);
        for ((sv, dv), hv) in s.values().iter().zip(d.values().iter()).zip(h.values().iter()) {
            assert!((sv + dv * hv).abs() < 1e-10);
        }
    }

    #[test]
    fn advect_skew_symmetry_tracks_divergence() {
        let g = GridSpec::square(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_field(g, &mut rng);
        let h = random_field(g, &mut rng);
        let base = curl_of_nodal(g, |x, y| (PI * x).sin() * (PI * y).sin() * (x + y));
        let noise = random_velocity(g, &mut rng);
        for eps in [0.0, 1e-6, 1e-3, 1e-1] {
            let mut v = base.clone();
            v.axpy(eps, &noise);
            let sym = advect(&v, &f).dot(&h) + advect(&v, &h).dot(&f);
            let bound = divergence(&v).norm_l2() * f.norm_inf() * h.norm_inf() + 1e-12;
            assert!(sym.abs() <= bound, "eps {eps}: {sym} > {bound}");
        }
    }

    #[test]
    fn face_force_cases_and_duality() {
        let g = GridSpec::new(20, 20).unwrap();
        let zero = ScalarField::zeros(g);
        let tconst = ScalarField::constant(g, 2.0);
        let lin = ScalarField::from_fn(g, |x, _| x);
        assert!(face_force(&lin, &tconst).is_zero());
        assert!(face_force(&zero, &lin).is_zero());
        let f = face_force(&ScalarField::constant(g, 1.0), &lin);
        for i in 1..20 {
            for j in 0..20 {
                assert!((f.u()[[i, j]] - 1.0).abs() < 1e-12);
            }
        }
        assert!(f.w().iter().all(|v| v.abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_field(g, &mut rng);
        let t = random_field(g, &mut rng);
        let h = random_velocity(g, &mut rng);
        let a = q.dot(&advect(&h, &t));
        let b = face_force(&q, &t).dot(&h);
        assert!((a - b).abs() < 1e-11 * a.abs().max(1.0));
    }

    #[test]
    fn h1_seminorm_matches_laplacian_form() {
        let g = GridSpec::new(9, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = random_velocity(g, &mut rng);
        let h = random_velocity(g, &mut rng);
        let direct = v.h1_seminorm_sq();
        let form = -v.dot(&vector_laplacian(&v));
        assert!((direct - form).abs() < 1e-10 * direct);
        assert!((v.h1_inner(&h) - h.h1_inner(&v)).abs() < 1e-9 * direct);
        assert!(direct > 0.0);
        assert_eq!(StaggeredVelocity::zeros(g).h1_seminorm_sq(), 0.0);
    }

    #[test]
    fn prolong_constant_and_linear() {
        let c = GridSpec::square(10).unwrap();
        let f = c.refined();
        let k = prolong_scalar(&ScalarField::constant(c, 3.0), f).unwrap();
        assert!(k.values().iter().all(|v| (v - 3.0).abs() < 1e-14));
        let lin = prolong_scalar(&ScalarField::from_fn(c, |x, y| 2.0 * x - y + 1.0), f).unwrap();
        let exact = ScalarField::from_fn(f, |x, y| 2.0 * x - y + 1.0);
        assert!((&lin.values - &exact.values).iter().all(|e| e.abs() < 1e-13));
        let v = StaggeredVelocity::from_fns(c, |x, y| x + y, |x, y| x - 2.0 * y);
        let vf = prolong_velocity(&v, f).unwrap();
        let ve = StaggeredVelocity::from_fns(f, |x, y| x + y, |x, y| x - 2.0 * y);
        // exact on fine faces that coincide with coarse face lines (walls pin the rest to zero)
        for i in (0..=20).step_by(2) {
            for j in 0..20 {
                assert!((vf.u[[i, j]] - ve.u[[i, j]]).abs() < 1e-13);
                assert!((vf.w[[j, i]] - ve.w[[j, i]]).abs() < 1e-13);
            }
        }
        assert!(prolong_velocity(&StaggeredVelocity::zeros(c), f).unwrap().is_zero());
        assert!(prolong_scalar(&k, GridSpec::square(30).unwrap()).is_err());
    }

    #[test]
    fn prolong_matches_two_stage_linear_interpolation() {
        let c = GridSpec::square(10).unwrap();
        let f = c.refined();
        let t0 = |x: f64, y: f64| {
            10.0 * (0.5
                + (10.0 * (1.0 - 32.0 * (x - 0.25).powi(2) - 16.0 * (y - 0.25).powi(2))).atan() / PI)
        };
        let coarse = ScalarField::from_fn(c, t0);
        let fine = prolong_scalar(&coarse, f).unwrap();
        // independent oracle: interpolate along x for every coarse row, then along y
        let lerp1 = |xs: &[f64], ys: &[f64], x: f64| -> f64 {
            let n = xs.len();
            let mut k = 0;
            while k + 2 < n && x > xs[k + 1] {
                k += 1;
            }
            let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
            ys[k] * (1.0 - t) + ys[k + 1] * t
        };
        let xc: Vec<f64> = (0..10).map(|i| c.x_center(i)).collect();
        let stage1: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                (0..10)
                    .map(|l| {
                        let row: Vec<f64> = (0..10).map(|k| coarse.values()[[k, l]]).collect();
                        lerp1(&xc, &row, f.x_center(i))
                    })
                    .collect()
            })
            .collect();
        for i in 0..20 {
            for j in 0..20 {
                let o = lerp1(&xc, &stage1[i], f.y_center(j));
                assert!((fine.values()[[i, j]] - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn restrict_inverts_constant_prolongation() {
        let c = GridSpec::square(6).unwrap();
        let lin = ScalarField::from_fn(c, |x, y| x + 3.0 * y);
        let back = restrict_scalar(&prolong_scalar(&lin, c.refined()).unwrap(), c).unwrap();
        assert!((&back.values - &lin.values).iter().all(|e| e.abs() < 1e-13));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn deviation_mean_zero(seed in any::<u64>(), nx in 2usize..12, ny in 2usize..12, scale in 1e-3f64..1e3) {
                let g = GridSpec::new(nx, ny).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = random_field(g, &mut rng).scaled(scale);
                prop_assert!(mean(&deviation(&f)).abs() <= 1e-12 * f.norm_inf());
            }

            #[test]
            fn laplacian_negative_semidefinite(seed in any::<u64>(), nx in 2usize..12, ny in 2usize..12) {
                let g = GridSpec::new(nx, ny).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = random_field(g, &mut rng);
                prop_assert!(f.dot(&laplacian_neumann(&f, 1.0)) <= 1e-12);
            }
        }
    }
}
