//! Time marchers for the heat transport equation, its discrete adjoint and its
//! linearisation, all on the same semi-implicit Euler scheme:
//!
//! ```text
//! (I - κ·dt·Δ_h) T^{i+1} = T^i - dt·advect(v_i, T^i),   i = 0..n_t-1
//! ```
//!
//! Control entry `v_i` acts on the step `t_i → t_{i+1}`.
//!
//! The adjoint is the exact transpose of the discrete forward map for the
//! right-endpoint cost `α/2‖DT^n‖² + β/2·dt·Σ_{i≥1}‖DT^i‖²`, so gradients of the
//! discrete objective are exact up to linear-solver tolerance:
//!
//! ```text
//! E λ^n = (α + β·dt)·D T^n
//! E λ^i = λ^{i+1} - dt·advectᵀ(v_i, λ^{i+1}) + β·dt·D T^i,   i = n_t-1..1
//! E λ^0 = λ^1 - dt·advectᵀ(v_0, λ^1)
//! ```
//!
//! with `E = I - κ·dt·Δ_h` and `D` the mean-removal projector. The gradient
//! with respect to `v_j` pairs `λ^{j+1}` with `T^j`.

use crate::error::{Error, Result};
use crate::grid::{
    advect, advect_transpose, deviation, prolong_velocity, GridSpec, ScalarField,
    StaggeredVelocity, TimeGrid,
};
use crate::linsolve::{helmholtz_solve, HelmholtzOperator, DEFAULT_LINEAR_TOL};

/// Scalar fields at the `n_t + 1` time nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    timegrid: TimeGrid,
    fields: Vec<ScalarField>,
}

impl Trajectory {
    pub fn new(timegrid: TimeGrid, fields: Vec<ScalarField>) -> Result<Self> {
        if fields.len() != timegrid.steps() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "trajectory needs {} fields, got {}",
                timegrid.steps() + 1,
                fields.len()
            )));
        }
        let g = fields[0].grid();
        if fields.iter().any(|f| f.grid() != g) {
            return Err(Error::ShapeMismatch("trajectory fields live on different grids".into()));
        }
        Ok(Trajectory { timegrid, fields })
    }

    pub fn timegrid(&self) -> TimeGrid {
        self.timegrid
    }

    pub fn grid(&self) -> GridSpec {
        self.fields[0].grid()
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &ScalarField {
        &self.fields[i]
    }

    pub fn first(&self) -> &ScalarField {
        &self.fields[0]
    }

    pub fn last(&self) -> &ScalarField {
        &self.fields[self.fields.len() - 1]
    }

    pub fn into_fields(self) -> Vec<ScalarField> {
        self.fields
    }
}

/// Velocities for the `n_t` time steps; entry `i` drives `t_i → t_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    timegrid: TimeGrid,
    velocities: Vec<StaggeredVelocity>,
}

impl ControlTrajectory {
    pub fn new(timegrid: TimeGrid, velocities: Vec<StaggeredVelocity>) -> Result<Self> {
        if velocities.len() != timegrid.steps() {
            return Err(Error::ShapeMismatch(format!(
                "control needs {} entries, got {}",
                timegrid.steps(),
                velocities.len()
            )));
        }
        let g = velocities[0].grid();
        if velocities.iter().any(|v| v.grid() != g) {
            return Err(Error::ShapeMismatch("control entries live on different grids".into()));
        }
        Ok(ControlTrajectory { timegrid, velocities })
    }

    pub fn zeros(grid: GridSpec, timegrid: TimeGrid) -> Self {
        ControlTrajectory {
            timegrid,
            velocities: vec![StaggeredVelocity::zeros(grid); timegrid.steps()],
        }
    }

    /// Samples `(u, w)(x, y, t)` at the right endpoint `t_{i+1}` of each step.
    pub fn from_fns(
        grid: GridSpec,
        timegrid: TimeGrid,
        u: impl Fn(f64, f64, f64) -> f64,
        w: impl Fn(f64, f64, f64) -> f64,
    ) -> Self {
        let velocities = (0..timegrid.steps())
            .map(|i| {
                let t = timegrid.time(i + 1);
                StaggeredVelocity::from_fns(grid, |x, y| u(x, y, t), |x, y| w(x, y, t))
            })
            .collect();
        ControlTrajectory { timegrid, velocities }
    }

    pub fn timegrid(&self) -> TimeGrid {
        self.timegrid
    }

    pub fn grid(&self) -> GridSpec {
        self.velocities[0].grid()
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn entries(&self) -> &[StaggeredVelocity] {
        &self.velocities
    }

    pub fn entries_mut(&mut self) -> &mut [StaggeredVelocity] {
        &mut self.velocities
    }

    pub fn entry(&self, i: usize) -> &StaggeredVelocity {
        &self.velocities[i]
    }

    pub fn into_entries(self) -> Vec<StaggeredVelocity> {
        self.velocities
    }

    pub fn scaled(&self, c: f64) -> ControlTrajectory {
        ControlTrajectory {
            timegrid: self.timegrid,
            velocities: self.velocities.iter().map(|v| v.scaled(c)).collect(),
        }
    }

    pub fn axpy(&mut self, a: f64, x: &ControlTrajectory) {
        debug_assert_eq!(self.len(), x.len());
        for (v, xv) in self.velocities.iter_mut().zip(&x.velocities) {
            v.axpy(a, xv);
        }
    }

    /// Discrete `L²(0,t_f; L²)` inner product `dt·Σ⟨v_i, w_i⟩`.
    pub fn dot(&self, other: &ControlTrajectory) -> f64 {
        self.timegrid.dt()
            * self
                .velocities
                .iter()
                .zip(&other.velocities)
                .map(|(a, b)| a.dot(b))
                .sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `max_i ‖v_i‖₂`.
    pub fn max_l2(&self) -> f64 {
        self.velocities.iter().map(|v| v.norm_l2()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.velocities.iter().map(|v| v.max_abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.velocities.iter().all(|v| v.is_finite())
    }

    /// All face values, entry by entry (`u` then `w`, row-major).
    pub fn to_flat(&self) -> Vec<f64> {
        let g = self.grid();
        let mut out = Vec::with_capacity(self.len() * g.face_count());
        for v in &self.velocities {
            out.extend(v.u().iter());
            out.extend(v.w().iter());
        }
        out
    }

    /// Inverse of [`ControlTrajectory::to_flat`]; boundary-normal faces are re-zeroed.
    pub fn from_flat(grid: GridSpec, timegrid: TimeGrid, data: &[f64]) -> Result<Self> {
        let (nu, nw) = ((grid.nx() + 1) * grid.ny(), grid.nx() * (grid.ny() + 1));
        if data.len() != timegrid.steps() * (nu + nw) {
            return Err(Error::ShapeMismatch(format!(
                "flat control has {} values, expected {}",
                data.len(),
                timegrid.steps() * (nu + nw)
            )));
        }
        let velocities = data
            .chunks_exact(nu + nw)
            .map(|chunk| {
                let mut v = StaggeredVelocity::zeros(grid);
                for (dst, src) in v.u_mut().iter_mut().zip(&chunk[..nu]) {
                    *dst = *src;
                }
                for (dst, src) in v.w_mut().iter_mut().zip(&chunk[nu..]) {
                    *dst = *src;
                }
                v.zero_boundary_normal();
                v
            })
            .collect();
        Ok(ControlTrajectory { timegrid, velocities })
    }

    /// Prolongs onto a grid with doubled cell and step counts.
    ///
    /// Entries sit at right-endpoint times: fine entry `2j+1` coincides with
    /// coarse entry `j`, fine entry `2j` is the average of coarse `j-1` and `j`,
    /// and fine entry 0 is linearly extrapolated.
    pub fn prolong(&self, fine: GridSpec, fine_time: TimeGrid) -> Result<ControlTrajectory> {
        if fine_time.steps() != 2 * self.len() {
            return Err(Error::ShapeMismatch(format!(
                "time prolongation needs {} fine steps, got {}",
                2 * self.len(),
                fine_time.steps()
            )));
        }
        let spatial: Vec<StaggeredVelocity> = self
            .velocities
            .iter()
            .map(|v| prolong_velocity(v, fine))
            .collect::<Result<_>>()?;
        let n = spatial.len();
        let mut velocities = Vec::with_capacity(2 * n);
        for j in 0..n {
            let even = if j > 0 {
                let mut m = spatial[j - 1].scaled(0.5);
                m.axpy(0.5, &spatial[j]);
                m
            } else if n > 1 {
                let mut m = spatial[0].scaled(1.5);
                m.axpy(-0.5, &spatial[1]);
                m
            } else {
                spatial[0].clone()
            };
            velocities.push(even);
            velocities.push(spatial[j].clone());
        }
        Ok(ControlTrajectory {
            timegrid: fine_time,
            velocities,
        })
    }
}

fn check_pair(v: &ControlTrajectory, grid: GridSpec, tg: TimeGrid) -> Result<()> {
    if v.grid() != grid {
        return Err(Error::ShapeMismatch(format!(
            "control grid {}x{} differs from state grid {}x{}",
            v.grid().nx(),
            v.grid().ny(),
            grid.nx(),
            grid.ny()
        )));
    }
    if v.timegrid() != tg {
        return Err(Error::ShapeMismatch("control and state time grids differ".into()));
    }
    Ok(())
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidConfig(format!("diffusivity must be positive, got {kappa}")));
    }
    Ok(())
}

fn implicit_operator(grid: GridSpec, kappa: f64, dt: f64) -> Result<HelmholtzOperator> {
    HelmholtzOperator::new(grid, kappa * dt)
}

/// `dt·max|v|/h`, the advective Courant number of one control entry.
pub fn courant_number(v: &StaggeredVelocity, dt: f64) -> f64 {
    let g = v.grid();
    dt * v.max_abs() / g.hx().min(g.hy())
}

/// One semi-implicit step `E T⁺ = T - dt·advect(v, T)`.
pub fn state_step(
    op: &HelmholtzOperator,
    v: &StaggeredVelocity,
    t: &ScalarField,
    dt: f64,
) -> Result<ScalarField> {
    let mut rhs = t.clone();
    if !v.is_zero() {
        rhs.axpy(-dt, &advect(v, t));
    }
    Ok(helmholtz_solve(op, &rhs, DEFAULT_LINEAR_TOL)?.0)
}

/// Marches the state forward from `t0` under the control `v`.
pub fn forward_solve(v: &ControlTrajectory, t0: &ScalarField, kappa: f64) -> Result<Trajectory> {
    check_kappa(kappa)?;
    let tg = v.timegrid();
    check_pair(v, t0.grid(), tg)?;
    let dt = tg.dt();
    let op = implicit_operator(t0.grid(), kappa, dt)?;
    let cfl = v.entries().iter().map(|e| courant_number(e, dt)).fold(0.0, f64::max);
    if cfl > 1.0 {
        log::warn!("advective Courant number {cfl:.2} exceeds 1; the explicit transport step may be unstable");
    }
    let mut fields = Vec::with_capacity(tg.steps() + 1);
    fields.push(t0.clone());
    for (i, vi) in v.entries().iter().enumerate() {
        let next = state_step(&op, vi, &fields[i], dt).map_err(|e| e.at_time(i + 1))?;
        fields.push(next);
    }
    Trajectory::new(tg, fields)
}

/// Discrete adjoint of [`forward_solve`] for the cost weights `α`, `β`.
pub fn adjoint_solve(
    v: &ControlTrajectory,
    t: &Trajectory,
    alpha: f64,
    beta: f64,
    kappa: f64,
) -> Result<Trajectory> {
    check_kappa(kappa)?;
    let tg = t.timegrid();
    check_pair(v, t.grid(), tg)?;
    let n = tg.steps();
    let dt = tg.dt();
    let op = implicit_operator(t.grid(), kappa, dt)?;
    let solve = |rhs: &ScalarField, i: usize| -> Result<ScalarField> {
        helmholtz_solve(&op, rhs, DEFAULT_LINEAR_TOL)
            .map(|r| r.0)
            .map_err(|e| e.at_time(i))
    };
    let mut lam = vec![ScalarField::zeros(t.grid()); n + 1];
    lam[n] = solve(&deviation(t.last()).scaled(alpha + beta * dt), n)?;
    for i in (0..n).rev() {
        let mut rhs = lam[i + 1].clone();
        if !v.entry(i).is_zero() {
            rhs.axpy(-dt, &advect_transpose(v.entry(i), &lam[i + 1]));
        }
        if i > 0 && beta != 0.0 {
            rhs.axpy(beta * dt, &deviation(t.field(i)));
        }
        lam[i] = solve(&rhs, i)?;
    }
    Trajectory::new(tg, lam)
}

/// Gâteaux derivative `z = T'(v)·h` of the discrete state.
pub fn linearized_solve(
    v: &ControlTrajectory,
    t: &Trajectory,
    h: &ControlTrajectory,
    kappa: f64,
) -> Result<Trajectory> {
    check_kappa(kappa)?;
    let tg = t.timegrid();
    check_pair(v, t.grid(), tg)?;
    check_pair(h, t.grid(), tg)?;
    let dt = tg.dt();
    let op = implicit_operator(t.grid(), kappa, dt)?;
    let mut z = Vec::with_capacity(tg.steps() + 1);
    z.push(ScalarField::zeros(t.grid()));
    for i in 0..tg.steps() {
        let mut rhs = z[i].clone();
        if !v.entry(i).is_zero() {
            rhs.axpy(-dt, &advect(v.entry(i), &z[i]));
        }
        if !h.entry(i).is_zero() {
            rhs.axpy(-dt, &advect(h.entry(i), t.field(i)));
        }
        let next = helmholtz_solve(&op, &rhs, DEFAULT_LINEAR_TOL)
            .map_err(|e| e.at_time(i + 1))?
            .0;
        z.push(next);
    }
    Trajectory::new(tg, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{face_force, mean};
    use crate::stokes::{stokes_solve, DEFAULT_STOKES_TOL};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn swirl(grid: GridSpec, tg: TimeGrid, amp: f64) -> ControlTrajectory {
        // divergence-free: stream function sin²(πx)sin²(πy) sampled on faces
        ControlTrajectory::from_fns(
            grid,
            tg,
            |x, y, t| amp * (1.0 + t) * 2.0 * PI * (PI * x).sin().powi(2) * (PI * y).sin() * (PI * y).cos(),
            |x, y, t| -amp * (1.0 + t) * 2.0 * PI * (PI * y).sin().powi(2) * (PI * x).sin() * (PI * x).cos(),
        )
    }

    fn stokes_control(grid: GridSpec, tg: TimeGrid, seed: u64) -> ControlTrajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..tg.steps())
            .map(|_| {
                let (a, b, c) = (
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let f = StaggeredVelocity::from_fns(
                    grid,
                    |x, y| a * (3.0 * y).sin() + c * x,
                    |x, y| b * (2.0 * x).cos() + c * y * y,
                );
                stokes_solve(&f, 0.05, DEFAULT_STOKES_TOL).unwrap().velocity
            })
            .collect();
        ControlTrajectory::new(tg, entries).unwrap()
    }

    fn bump(grid: GridSpec) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| {
            10.0 * (0.5 + (10.0 * (1.0 - 32.0 * (x - 0.25).powi(2) - 16.0 * (y - 0.25).powi(2))).atan() / PI)
        })
    }

    #[test]
    fn constant_state_is_steady() {
        let g = GridSpec::square(12).unwrap();
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let t = forward_solve(&swirl(g, tg, 1.0), &ScalarField::constant(g, 2.5), 0.05).unwrap();
        for f in t.fields() {
            assert!(f.values().iter().all(|v| (v - 2.5).abs() < 1e-12));
        }
    }

    #[test]
    fn cosine_mode_decays_at_heat_rate() {
        let kappa = 0.05;
        let g = GridSpec::square(32).unwrap();
        let tg = TimeGrid::new(1.0, 160).unwrap();
        let t0 = ScalarField::from_fn(g, |x, _| (PI * x).cos());
        let t = forward_solve(&ControlTrajectory::zeros(g, tg), &t0, kappa).unwrap();
        let d0 = deviation(t.first()).norm_l2().powi(2);
        let dn = deviation(t.last()).norm_l2().powi(2);
        let rate = -(dn / d0).ln() / tg.t_final();
        assert!(rate >= 2.0 * kappa * PI * PI * 0.95, "rate {rate}");
        for f in t.fields() {
            assert!(mean(f).abs() < 1e-13);
        }
        // exact discrete eigenmode
        let mu = 4.0 / g.hx().powi(2) * (PI * g.hx() / 2.0).sin().powi(2);
        let rho = 1.0 / (1.0 + kappa * tg.dt() * mu);
        let expect = t0.scaled(rho.powi(tg.steps() as i32));
        let mut e = t.last().clone();
        e.axpy(-1.0, &expect);
        assert!(e.norm_inf() < 1e-11);
    }

    #[test]
    fn divergence_free_transport_conserves_mean_and_variance_bound() {
        let g = GridSpec::square(24).unwrap();
        let tg = TimeGrid::new(1.0, 24).unwrap();
        let t0 = bump(g);
        let v = stokes_control(g, tg, 3);
        let t = forward_solve(&v, &t0, 0.05).unwrap();
        let m0 = mean(&t0);
        for f in t.fields() {
            assert!((mean(f) - m0).abs() <= 1e-8 * t0.norm_inf());
            assert!(f.norm_l2() <= 2.0 * t0.norm_l2());
            assert!(f.norm_inf() <= 1.05 * t0.norm_inf());
        }
    }

    #[test]
    fn zero_control_variance_is_monotone() {
        let g = GridSpec::square(20).unwrap();
        let tg = TimeGrid::new(1.0, 20).unwrap();
        let t = forward_solve(&ControlTrajectory::zeros(g, tg), &bump(g), 0.05).unwrap();
        for w in t.fields().windows(2) {
            assert!(deviation(&w[1]).norm_l2() <= deviation(&w[0]).norm_l2());
        }
    }

    #[test]
    fn adjoint_trivial_cases() {
        let g = GridSpec::square(12).unwrap();
        let tg = TimeGrid::new(1.0, 8).unwrap();
        let v = swirl(g, tg, 0.5);
        let t = forward_solve(&v, &bump(g), 0.05).unwrap();
        let q = adjoint_solve(&v, &t, 0.0, 0.0, 0.05).unwrap();
        assert!(q.fields().iter().all(|f| f.norm_inf() == 0.0));
        let zero = ControlTrajectory::zeros(g, tg);
        let t = forward_solve(&zero, &bump(g), 0.05).unwrap();
        let q = adjoint_solve(&zero, &t, 1.0, 0.0, 0.05).unwrap();
        for f in q.fields() {
            assert!(mean(f).abs() < 1e-13);
        }
        assert!(q.first().norm_l2() < q.last().norm_l2());
    }

    #[test]
    fn adjoint_matches_single_mode_ode() {
        let kappa = 0.05;
        let g = GridSpec::square(16).unwrap();
        let tg = TimeGrid::new(1.0, 400).unwrap();
        let dt = tg.dt();
        let t0 = ScalarField::from_fn(g, |x, _| (PI * x).cos());
        let zero = ControlTrajectory::zeros(g, tg);
        let t = forward_solve(&zero, &t0, kappa).unwrap();
        let q = adjoint_solve(&zero, &t, 0.0, 1.0, kappa).unwrap();
        // discrete coefficient recurrence
        let mu = 4.0 / g.hx().powi(2) * (PI * g.hx() / 2.0).sin().powi(2);
        let e = 1.0 + kappa * dt * mu;
        let n = tg.steps();
        let a: Vec<f64> = (0..=n).map(|i| e.powi(-(i as i32))).collect();
        let mut c = vec![0.0; n + 1];
        c[n] = dt * a[n] / e;
        for i in (1..n).rev() {
            c[i] = (c[i + 1] + dt * a[i]) / e;
        }
        c[0] = c[1] / e;
        // continuous: -c' = -kc + e^{-kt}, c(t_f) = 0
        let k = kappa * PI * PI;
        let exact = |s: f64| ((-k * s).exp() - (k * (s - 2.0)).exp()) / (2.0 * k);
        for i in 0..=n {
            let coef = q.field(i).dot(&t0) / t0.dot(&t0);
            assert!((coef - c[i]).abs() < 1e-11, "discrete mismatch at {i}");
            assert!((coef - exact(tg.time(i))).abs() < 5e-3, "continuous mismatch at {i}");
        }
    }

    #[test]
    fn adjoint_is_transpose_of_tangent() {
        // ⟨∂J/∂T-path, z⟩ computed two ways: forward tangent vs adjoint pairing
        let (alpha, beta, kappa) = (0.7, 1.3, 0.05);
        let g = GridSpec::new(10, 8).unwrap();
        let tg = TimeGrid::new(0.5, 7).unwrap();
        let v = stokes_control(g, tg, 5);
        let h = stokes_control(g, tg, 6);
        let t = forward_solve(&v, &bump(g), kappa).unwrap();
        let q = adjoint_solve(&v, &t, alpha, beta, kappa).unwrap();
        let z = linearized_solve(&v, &t, &h, kappa).unwrap();
        let dt = tg.dt();
        let n = tg.steps();
        let mut lhs = alpha * deviation(t.last()).dot(z.field(n));
        for i in 1..=n {
            lhs += beta * dt * deviation(t.field(i)).dot(z.field(i));
        }
        let rhs: f64 = (0..n)
            .map(|i| -dt * face_force(q.field(i + 1), t.field(i)).dot(h.entry(i)))
            .sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1e-3), "{lhs} vs {rhs}");
    }

    #[test]
    fn linearized_is_linear_and_tangent() {
        let kappa = 0.05;
        let g = GridSpec::square(12).unwrap();
        let tg = TimeGrid::new(1.0, 12).unwrap();
        let v = stokes_control(g, tg, 11);
        let h = stokes_control(g, tg, 12);
        let t0 = bump(g);
        let t = forward_solve(&v, &t0, kappa).unwrap();
        let z0 = linearized_solve(&v, &t, &ControlTrajectory::zeros(g, tg), kappa).unwrap();
        assert!(z0.fields().iter().all(|f| f.norm_inf() == 0.0));
        let z = linearized_solve(&v, &t, &h, kappa).unwrap();
        let z3 = linearized_solve(&v, &t, &h.scaled(-3.0), kappa).unwrap();
        for (a, b) in z.fields().iter().zip(z3.fields()) {
            let mut d = b.clone();
            d.axpy(3.0, a);
            assert!(d.norm_inf() <= 1e-12 * a.norm_inf().max(1.0));
        }
        let mut logs = Vec::new();
        for eps in [1e-2, 1e-3, 1e-4] {
            let mut vp = v.clone();
            vp.axpy(eps, &h);
            let tp = forward_solve(&vp, &t0, kappa).unwrap();
            let mut err2 = 0.0;
            for i in 0..=tg.steps() {
                let mut d = tp.field(i).clone();
                d.axpy(-1.0, t.field(i));
                d.axpy(-eps, z.field(i));
                err2 += d.norm_l2().powi(2);
            }
            logs.push((eps.ln(), err2.sqrt().ln()));
        }
        let slope = (logs[0].1 - logs[2].1) / (logs[0].0 - logs[2].0);
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn flat_roundtrip_and_norms() {
        let g = GridSpec::new(6, 5).unwrap();
        let tg = TimeGrid::new(1.0, 4).unwrap();
        let v = swirl(g, tg, 1.0);
        let back = ControlTrajectory::from_flat(g, tg, &v.to_flat()).unwrap();
        assert_eq!(back, v);
        assert!(ControlTrajectory::from_flat(g, tg, &[0.0; 3]).is_err());
        let n2: f64 = v.entries().iter().map(|e| e.dot(e)).sum::<f64>() * tg.dt();
        assert!((v.norm() - n2.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn prolong_in_time_is_exact_for_linear_in_time() {
        let g = GridSpec::square(10).unwrap();
        let tg = TimeGrid::new(1.0, 5).unwrap();
        let v = ControlTrajectory::from_fns(g, tg, |_, y, t| t * y * (1.0 - y), |x, _, t| 2.0 * t * x * (1.0 - x));
        let fine = v.prolong(g, tg.refined()).unwrap();
        let exact = ControlTrajectory::from_fns(g, tg.refined(), |_, y, t| t * y * (1.0 - y), |x, _, t| 2.0 * t * x * (1.0 - x));
        let mut d = fine.clone();
        d.axpy(-1.0, &exact);
        assert!(d.max_abs() < 1e-14);
        assert!(v.prolong(g, tg).is_err());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let g = GridSpec::square(8).unwrap();
        let tg = TimeGrid::new(1.0, 4).unwrap();
        let v = ControlTrajectory::zeros(g, tg);
        assert!(forward_solve(&v, &ScalarField::zeros(GridSpec::square(9).unwrap()), 0.05).is_err());
        assert!(forward_solve(&v, &ScalarField::zeros(g), 0.0).is_err());
        assert!(ControlTrajectory::new(tg, vec![StaggeredVelocity::zeros(g); 3]).is_err());
    }
}
