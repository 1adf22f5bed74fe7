//! Flat key-value run configuration, read from TOML and overridden by CLI flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::FeedbackConfig;
use crate::grid::{GridSpec, TimeGrid};
use crate::initial::InitialCondition;
use crate::objective::CostWeights;
use crate::optimize::OptimizeConfig;
use crate::stokes::DEFAULT_STOKES_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    None,
    Feedback,
    Optimal,
    Sweep,
    Verify,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Feedback => "feedback",
            Mode::Optimal => "optimal",
            Mode::Sweep => "sweep",
            Mode::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Example1,
    Example2,
    Example3,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub initial: Selector,
    pub initial_path: Option<PathBuf>,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub t_final: f64,
    pub mesh: usize,
    pub steps: usize,
    pub tol: f64,
    pub stokes_tol: f64,
    pub anderson_memory: usize,
    pub max_iter: usize,
    pub coarsest_mesh: usize,
    pub coarsest_steps: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_step: f64,
    /// Times at which temperature snapshots are written (nearest node).
    pub snapshot_times: Vec<f64>,
    /// Seed for random directions in verification runs.
    pub seed: u64,
    pub directions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::None,
            initial: Selector::Example1,
            initial_path: None,
            kappa: 0.05,
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.025,
            tau: 0.75,
            t_final: 1.0,
            mesh: 160,
            steps: 160,
            tol: 1e-5,
            stokes_tol: DEFAULT_STOKES_TOL,
            anderson_memory: 5,
            max_iter: 200,
            coarsest_mesh: 10,
            coarsest_steps: 10,
            tau_min: 0.0,
            tau_max: 2.0,
            tau_step: 0.1,
            snapshot_times: vec![0.0, 0.1, 0.5, 1.0],
            seed: 20_240_601,
            directions: 5,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Keys present in `text` replace the corresponding fields of `self`.
    pub fn overlay_toml(&self, text: &str) -> Result<Self> {
        let parse = |e: toml::de::Error| Error::Parse(e.to_string());
        let mut base: toml::Table = toml::from_str(&self.to_toml_string()?).map_err(parse)?;
        let top: toml::Table = toml::from_str(text).map_err(parse)?;
        base.extend(top);
        toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.initial == Selector::File && self.initial_path.is_none() {
            return bad("initial = \"file\" requires initial_path".into());
        }
        if self.initial != Selector::File && self.initial_path.is_some() {
            return bad("initial_path is only meaningful with initial = \"file\"".into());
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be non-negative, got {}", self.tau));
        }
        if !(self.tol > 0.0) || !(self.stokes_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.mode == Mode::Sweep
            && !(self.tau_step > 0.0 && self.tau_min >= 0.0 && self.tau_max >= self.tau_min)
        {
            return bad(format!(
                "sweep range [{}, {}] step {} is invalid",
                self.tau_min, self.tau_max, self.tau_step
            ));
        }
        if self.snapshot_times.iter().any(|&t| !(0.0..=self.t_final).contains(&t)) {
            return bad(format!("snapshot times must lie in [0, {}]", self.t_final));
        }
        self.weights()?;
        self.grid()?;
        self.timegrid()?;
        if self.mode == Mode::Optimal {
            self.optimize_config()?.validate()?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::square(self.mesh)
    }

    pub fn timegrid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.steps)
    }

    pub fn weights(&self) -> Result<CostWeights> {
        CostWeights::new(self.alpha, self.beta, self.gamma)
    }

    pub fn initial_condition(&self) -> Result<InitialCondition> {
        Ok(match self.initial {
            Selector::Example1 => InitialCondition::Example1,
            Selector::Example2 => InitialCondition::Example2,
            Selector::Example3 => InitialCondition::Example3,
            Selector::File => InitialCondition::File(
                self.initial_path
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("initial_path missing".into()))?,
            ),
        })
    }

    pub fn feedback_config(&self) -> Result<FeedbackConfig> {
        let mut cfg = FeedbackConfig::new(self.tau, self.kappa, self.weights()?, self.grid()?, self.timegrid()?)?;
        cfg.stokes_tol = self.stokes_tol;
        Ok(cfg)
    }

    pub fn optimize_config(&self) -> Result<OptimizeConfig> {
        let mut cfg = OptimizeConfig::new(self.grid()?, self.timegrid()?, self.initial_condition()?);
        cfg.kappa = self.kappa;
        cfg.weights = self.weights()?;
        cfg.tol = self.tol;
        cfg.memory = self.anderson_memory;
        cfg.max_iter = self.max_iter;
        cfg.coarsest = (self.coarsest_mesh, self.coarsest_mesh, self.coarsest_steps);
        cfg.stokes_tol = self.stokes_tol;
        Ok(cfg)
    }

    /// `tau_min, tau_min + tau_step, …` up to `tau_max` inclusive.
    pub fn sweep_taus(&self) -> Vec<f64> {
        let n = ((self.tau_max - self.tau_min) / self.tau_step + 1e-9).floor() as usize;
        // integer multiples avoid accumulated drift in the printed values
        (0..=n).map(|k| self.tau_min + k as f64 * self.tau_step).collect()
    }
}
