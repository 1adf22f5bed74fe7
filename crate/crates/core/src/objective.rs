//! Tracking-type cost functional and its derivatives.
//!
//! ```text
//! J(v) = α/2·‖DT^n‖² + β/2·dt·Σ_{i=1..n} ‖DT^i‖² + γ/2·dt·Σ_{i=0..n-1} |v_i|²_{H¹}
//! ```
//!
//! `|·|_{H¹}` is the discrete gradient seminorm of the MAC field, which equals
//! `⟨-Δ_h v, v⟩` under no-slip walls. Derivatives use the discrete adjoint of
//! [`crate::pde`], so they are exact derivatives of this discrete `J`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{advect, deviation, divergence, face_force, StaggeredVelocity};
use crate::pde::{linearized_solve, ControlTrajectory, Trajectory};

/// Weights `α` (terminal), `β` (running) and `γ` (control cost).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl CostWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = CostWeights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and nonnegative, got {x}")));
            }
        }
        if self.gamma == 0.0 {
            return Err(Error::InvalidConfig("gamma must be positive".into()));
        }
        Ok(())
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.025,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub j_total: f64,
    pub j_alpha: f64,
    pub j_beta: f64,
    pub j_gamma: f64,
    /// `max_i ‖∇_h·v_i‖₂`.
    pub max_div: f64,
    /// `max_i ‖v_i‖₂`.
    pub max_vel: f64,
    /// `max_i (‖u_i‖₂ + ‖w_i‖₂)`, the sum of component norms.
    pub max_vel_uw: f64,
}

fn check(t: &Trajectory, v: &ControlTrajectory) -> Result<()> {
    if t.grid() != v.grid() || t.timegrid() != v.timegrid() {
        return Err(Error::ShapeMismatch("state and control discretisations differ".into()));
    }
    Ok(())
}

fn component_norm_sum(e: &StaggeredVelocity) -> f64 {
    let area = e.grid().cell_area();
    let l2 = |a: &ndarray::Array2<f64>| (area * a.iter().map(|x| x * x).sum::<f64>()).sqrt();
    l2(e.u()) + l2(e.w())
}

pub fn evaluate(t: &Trajectory, v: &ControlTrajectory, w: CostWeights) -> Result<ObjectiveBreakdown> {
    check(t, v)?;
    let dt = t.timegrid().dt();
    let j_alpha = 0.5 * w.alpha * deviation(t.last()).norm_l2().powi(2);
    let j_beta = 0.5 * w.beta * dt * t.fields()[1..].iter().map(|f| deviation(f).norm_l2().powi(2)).sum::<f64>();
    let j_gamma = 0.5 * w.gamma * dt * v.entries().iter().map(|e| e.h1_seminorm_sq()).sum::<f64>();
    let max_div = v.entries().iter().map(|e| divergence(e).norm_l2()).fold(0.0, f64::max);
    Ok(ObjectiveBreakdown {
        j_total: j_alpha + j_beta + j_gamma,
        j_alpha,
        j_beta,
        j_gamma,
        max_div,
        max_vel: v.max_l2(),
        max_vel_uw: v.entries().iter().map(component_norm_sum).fold(0.0, f64::max),
    })
}

/// Accumulated cost at each node: entry `i` holds the running and control
/// terms over `[0, t_i]`; the terminal term is added to the last entry.
pub fn running_objective(t: &Trajectory, v: &ControlTrajectory, w: CostWeights) -> Result<Vec<f64>> {
    check(t, v)?;
    let dt = t.timegrid().dt();
    let n = t.timegrid().steps();
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(acc);
    for i in 1..=n {
        acc += 0.5 * dt * (w.beta * deviation(t.field(i)).norm_l2().powi(2) + w.gamma * v.entry(i - 1).h1_seminorm_sq());
        out.push(acc);
    }
    out[n] += 0.5 * w.alpha * deviation(t.last()).norm_l2().powi(2);
    Ok(out)
}

/// `J'(v)·h = dt·Σ_i [γ⟨∇v_i, ∇h_i⟩ - ⟨face_force(λ^{i+1}, T^i), h_i⟩]`.
pub fn directional_derivative(
    v: &ControlTrajectory,
    t: &Trajectory,
    q: &Trajectory,
    h: &ControlTrajectory,
    gamma: f64,
) -> Result<f64> {
    check(t, v)?;
    check(q, h)?;
    let dt = t.timegrid().dt();
    Ok(dt * (0..v.len())
        .map(|i| gamma * v.entry(i).h1_inner(h.entry(i)) - face_force(q.field(i + 1), t.field(i)).dot(h.entry(i)))
        .sum::<f64>())
}

/// `J''(v)·(h,h)` with `z = T'(v)·h`:
/// `α‖Dz^n‖² + β·dt·Σ‖Dz^i‖² + γ·dt·Σ|h_i|²_{H¹} - 2·dt·Σ⟨λ^{i+1}, advect(h_i, z^i)⟩`.
pub fn hessian_quadratic_form(
    v: &ControlTrajectory,
    t: &Trajectory,
    q: &Trajectory,
    h: &ControlTrajectory,
    w: CostWeights,
    kappa: f64,
) -> Result<f64> {
    check(t, v)?;
    check(q, h)?;
    let z = linearized_solve(v, t, h, kappa)?;
    let dt = t.timegrid().dt();
    let n = t.timegrid().steps();
    let mut form = w.alpha * deviation(z.last()).norm_l2().powi(2);
    form += w.beta * dt * z.fields()[1..].iter().map(|f| deviation(f).norm_l2().powi(2)).sum::<f64>();
    form += w.gamma * dt * h.entries().iter().map(|e| e.h1_seminorm_sq()).sum::<f64>();
    for i in 1..n {
        if !h.entry(i).is_zero() {
            form -= 2.0 * dt * q.field(i + 1).dot(&advect(h.entry(i), z.field(i)));
        }
    }
    Ok(form)
}
