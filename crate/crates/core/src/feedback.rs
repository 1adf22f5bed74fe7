//! Closed-loop feedback control obtained from the instantaneous (one-step)
//! optimality system:
//!
//! ```text
//! η = (I - κτΔ_N)⁻¹ D T
//! -γ Δ_h v + ∇_h p = τ·face_force(η, T),   ∇_h·v = 0
//! (I - κ·dt·Δ_N) T⁺ = T - dt·advect(v, T)
//! ```
//!
//! `τ` is the feedback gain (a time scale of the law), independent of `dt`.
//! `τ = 0` switches the control off and reproduces the uncontrolled run
//! exactly, since both go through [`state_step`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{deviation, face_force, laplacian_neumann, mean, GridSpec, ScalarField, StaggeredVelocity, TimeGrid};
use crate::linsolve::{helmholtz_solve, HelmholtzOperator, DEFAULT_LINEAR_TOL};
use crate::objective::{evaluate, CostWeights, ObjectiveBreakdown};
use crate::pde::{state_step, ControlTrajectory, Trajectory};
use crate::stokes::{stokes_solve, StokesSolution, DEFAULT_STOKES_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    pub tau: f64,
    pub kappa: f64,
    pub weights: CostWeights,
    pub grid: GridSpec,
    pub timegrid: TimeGrid,
    pub stokes_tol: f64,
}

impl FeedbackConfig {
    pub fn new(tau: f64, kappa: f64, weights: CostWeights, grid: GridSpec, timegrid: TimeGrid) -> Result<Self> {
        let cfg = FeedbackConfig {
            tau,
            kappa,
            weights,
            grid,
            timegrid,
            stokes_tol: DEFAULT_STOKES_TOL,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        let cfg = FeedbackConfig { tau, ..*self };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be finite and nonnegative, got {}", self.tau)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidConfig(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.stokes_tol > 0.0) {
            return Err(Error::InvalidConfig("Stokes tolerance must be positive".into()));
        }
        self.weights.validate()
    }
}

/// The feedback velocity for the current temperature, with its force.
#[derive(Debug, Clone)]
pub struct FeedbackVelocity {
    pub stokes: StokesSolution,
    pub force: StaggeredVelocity,
}

impl FeedbackVelocity {
    pub fn velocity(&self) -> &StaggeredVelocity {
        &self.stokes.velocity
    }

    /// `⟨force, v⟩ = γ|v|²_{H¹} ≥ 0`, the rate at which the control removes variance.
    pub fn power(&self) -> f64 {
        self.force.dot(&self.stokes.velocity)
    }
}

pub fn feedback_velocity(t: &ScalarField, cfg: &FeedbackConfig) -> Result<FeedbackVelocity> {
    if t.grid() != cfg.grid {
        return Err(Error::ShapeMismatch("temperature grid differs from feedback grid".into()));
    }
    let force = if cfg.tau == 0.0 {
        StaggeredVelocity::zeros(cfg.grid)
    } else {
        let op = HelmholtzOperator::new(cfg.grid, cfg.kappa * cfg.tau)?;
        let (eta, _) = helmholtz_solve(&op, &deviation(t), DEFAULT_LINEAR_TOL)?;
        face_force(&eta, t).scaled(cfg.tau)
    };
    let stokes = stokes_solve(&force, cfg.weights.gamma, cfg.stokes_tol)?;
    Ok(FeedbackVelocity { stokes, force })
}

/// One explicit-control step; returns `T⁺` and the velocity used.
pub fn closed_loop_step(t: &ScalarField, cfg: &FeedbackConfig) -> Result<(ScalarField, FeedbackVelocity)> {
    let fv = feedback_velocity(t, cfg)?;
    let op = HelmholtzOperator::new(cfg.grid, cfg.kappa * cfg.timegrid.dt())?;
    let next = state_step(&op, fv.velocity(), t, cfg.timegrid.dt())?;
    Ok((next, fv))
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub tau: f64,
    pub trajectory: Trajectory,
    /// Entry `i` is the feedback velocity of `T^i`.
    pub control: ControlTrajectory,
    pub objective: ObjectiveBreakdown,
    /// `‖DT^i‖₂` at every node.
    pub dt_norm: Vec<f64>,
    /// `mix_norm(T^i)` at every node.
    pub mix_norm: Vec<f64>,
    /// `⟨force_i, v_i⟩` for every control entry.
    pub control_power: Vec<f64>,
    pub wall_time: f64,
}

impl ClosedLoopRun {
    /// `max_i |mean(T^i) - mean(T^0)|`.
    pub fn mean_drift(&self) -> f64 {
        let m0 = mean(self.trajectory.first());
        self.trajectory.fields().iter().map(|f| (mean(f) - m0).abs()).fold(0.0, f64::max)
    }

    /// Whether `‖DT^i‖` never increases (up to a relative round-off slack).
    pub fn is_monotone(&self) -> bool {
        self.dt_norm.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
    }

    /// Average exponential decay rate of the mix-norm over the run.
    pub fn mix_norm_decay_rate(&self) -> f64 {
        let (first, last) = (self.mix_norm[0], self.mix_norm[self.mix_norm.len() - 1]);
        if first == 0.0 || last == 0.0 {
            return 0.0;
        }
        -(last / first).ln() / self.trajectory.timegrid().t_final()
    }
}

pub fn simulate_closed_loop(cfg: &FeedbackConfig, t0: &ScalarField) -> Result<ClosedLoopRun> {
    cfg.validate()?;
    if t0.grid() != cfg.grid {
        return Err(Error::ShapeMismatch("initial condition grid differs from feedback grid".into()));
    }
    let start = std::time::Instant::now();
    let n = cfg.timegrid.steps();
    let dt = cfg.timegrid.dt();
    let heat = HelmholtzOperator::new(cfg.grid, cfg.kappa * dt)?;
    let mut fields = Vec::with_capacity(n + 1);
    let mut velocities = Vec::with_capacity(n);
    let mut power = Vec::with_capacity(n);
    fields.push(t0.clone());
    for i in 0..n {
        let fv = feedback_velocity(&fields[i], cfg).map_err(|e| e.at_time(i))?;
        let next = state_step(&heat, fv.velocity(), &fields[i], dt).map_err(|e| e.at_time(i + 1))?;
        power.push(fv.power());
        velocities.push(fv.stokes.velocity);
        fields.push(next);
    }
    let wall_time = start.elapsed().as_secs_f64();
    let trajectory = Trajectory::new(cfg.timegrid, fields)?;
    let control = ControlTrajectory::new(cfg.timegrid, velocities)?;
    let objective = evaluate(&trajectory, &control, cfg.weights)?;
    let dt_norm = trajectory.fields().iter().map(|f| deviation(f).norm_l2()).collect();
    let mix = trajectory.fields().iter().map(mix_norm).collect::<Result<_>>()?;
    Ok(ClosedLoopRun {
        tau: cfg.tau,
        trajectory,
        control,
        objective,
        dt_norm,
        mix_norm: mix,
        control_power: power,
        wall_time,
    })
}

/// One row of a τ-sweep; failures are kept, not propagated.
#[derive(Debug)]
pub struct SweepRow {
    pub tau: f64,
    pub result: Result<ObjectiveBreakdown>,
    pub monotone: Option<bool>,
}

pub fn tau_sweep(base: &FeedbackConfig, taus: &[f64], t0: &ScalarField) -> Result<Vec<SweepRow>> {
    if taus.is_empty() {
        return Err(Error::InvalidConfig("tau sweep needs at least one value".into()));
    }
    let rows = taus
        .iter()
        .map(|&tau| {
            let run = base.with_tau(tau).and_then(|cfg| simulate_closed_loop(&cfg, t0));
            match run {
                Ok(r) => {
                    log::info!("tau {tau:.3}: J = {:.5}", r.objective.j_total);
                    SweepRow {
                        tau,
                        monotone: Some(r.is_monotone()),
                        result: Ok(r.objective),
                    }
                }
                Err(e) => {
                    log::warn!("tau {tau:.3} failed: {e}");
                    SweepRow {
                        tau,
                        monotone: None,
                        result: Err(e),
                    }
                }
            }
        })
        .collect();
    Ok(rows)
}

/// `τ` with the smallest objective among successful rows.
pub fn best_tau(rows: &[SweepRow]) -> Option<(f64, f64)> {
    rows.iter()
        .filter_map(|r| r.result.as_ref().ok().map(|o| (r.tau, o.j_total)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// `H¹` norm of `η = (I - Δ_N)⁻¹ D T`, a computable surrogate of `‖DT‖_{(H¹)'}`.
pub fn mix_norm(t: &ScalarField) -> Result<f64> {
    mix_norm_with(t, 1.0)
}

/// As [`mix_norm`] with `(I - cΔ_N)` in place of `(I - Δ_N)`.
pub fn mix_norm_with(t: &ScalarField, c: f64) -> Result<f64> {
    let op = HelmholtzOperator::new(t.grid(), c)?;
    let (eta, _) = helmholtz_solve(&op, &deviation(t), DEFAULT_LINEAR_TOL)?;
    let grad2 = -eta.dot(&laplacian_neumann(&eta, 1.0));
    Ok((eta.dot(&eta) + grad2.max(0.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::divergence;
    use crate::pde::forward_solve;
    use std::f64::consts::PI;

    fn bump(grid: GridSpec) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| {
            10.0 * (0.5 + (10.0 * (1.0 - 32.0 * (x - 0.25).powi(2) - 16.0 * (y - 0.25).powi(2))).atan() / PI)
        })
    }

    fn config(n: usize, tau: f64) -> FeedbackConfig {
        let g = GridSpec::square(n).unwrap();
        FeedbackConfig::new(tau, 0.05, CostWeights::default(), g, TimeGrid::new(1.0, n).unwrap()).unwrap()
    }

    #[test]
    fn constant_temperature_gives_no_flow() {
        let cfg = config(12, 0.75);
        let t = ScalarField::constant(cfg.grid, 4.0);
        let (next, fv) = closed_loop_step(&t, &cfg).unwrap();
        assert!(fv.velocity().is_zero());
        assert!(next.values().iter().all(|v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn velocity_vanishes_quadratically_with_tau() {
        // η = DT + O(τ) and DT∇T = ∇(½(DT)²) is removed by the projection
        let t = bump(GridSpec::square(16).unwrap());
        let a = feedback_velocity(&t, &config(16, 1e-6)).unwrap().velocity().norm_l2();
        let b = feedback_velocity(&t, &config(16, 2e-6)).unwrap().velocity().norm_l2();
        assert!(a > 0.0);
        assert!((b / a - 4.0).abs() < 1e-2, "{a} {b}");
    }

    #[test]
    fn one_step_reduces_variance() {
        let g = GridSpec::square(40).unwrap();
        let t = bump(g);
        for tau in [0.25, 0.5, 0.75, 1.0] {
            let (next, fv) = closed_loop_step(&t, &config(40, tau)).unwrap();
            assert!(deviation(&next).norm_l2() < deviation(&t).norm_l2());
            assert!(fv.power() >= 0.0);
            assert!(divergence(fv.velocity()).norm_l2() < 1e-8);
        }
    }

    #[test]
    fn zero_tau_matches_uncontrolled_run_bitwise() {
        let cfg = config(20, 0.0);
        let t0 = bump(cfg.grid);
        let run = simulate_closed_loop(&cfg, &t0).unwrap();
        let free = forward_solve(&ControlTrajectory::zeros(cfg.grid, cfg.timegrid), &t0, cfg.kappa).unwrap();
        assert_eq!(run.trajectory, free);
        assert_eq!(run.objective.j_gamma, 0.0);
        let rows = tau_sweep(&cfg, &[0.0], &t0).unwrap();
        assert_eq!(rows[0].result.as_ref().unwrap().j_total, run.objective.j_total);
    }

    #[test]
    fn closed_loop_conserves_mean_and_decays() {
        let cfg = config(20, 0.75);
        let t0 = bump(cfg.grid);
        let run = simulate_closed_loop(&cfg, &t0).unwrap();
        assert!(run.mean_drift() <= 1e-8 * t0.norm_inf());
        assert!(run.is_monotone());
        assert!(run.control_power.iter().all(|&p| p >= 0.0));
        let free = simulate_closed_loop(&cfg.with_tau(0.0).unwrap(), &t0).unwrap();
        assert!(run.objective.j_beta < free.objective.j_beta);
        assert!(run.mix_norm_decay_rate() > free.mix_norm_decay_rate());
    }

    #[test]
    fn sweep_keeps_failures() {
        let cfg = config(10, 0.5);
        let t0 = bump(cfg.grid);
        let rows = tau_sweep(&cfg, &[0.5, -1.0, 0.25], &t0).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].result.is_err());
        assert!(best_tau(&rows).is_some());
        assert!(tau_sweep(&cfg, &[], &t0).is_err());
    }

    #[test]
    fn mix_norm_of_cosine_mode() {
        let g = GridSpec::square(32).unwrap();
        let t = ScalarField::from_fn(g, |x, _| (PI * x).cos());
        let mu = 4.0 / g.hx().powi(2) * (PI * g.hx() / 2.0).sin().powi(2);
        // η = T/(1+μ), ‖η‖²_{H¹} = (1+μ)‖T‖²/(1+μ)²
        let expect = t.norm_l2() / (1.0 + mu).sqrt();
        assert!((mix_norm(&t).unwrap() - expect).abs() < 1e-12);
        let cont = t.norm_l2() / (1.0 + PI * PI).sqrt();
        assert!((mix_norm(&t).unwrap() - cont).abs() < 1e-2 * cont);
        assert!((mix_norm(&t.scaled(-3.0)).unwrap() - 3.0 * expect).abs() < 1e-12);
        assert!(mix_norm(&ScalarField::constant(g, 2.0)).unwrap() < 1e-13);
    }
}
