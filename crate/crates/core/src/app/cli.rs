//! Command-line front end. Configuration is layered: built-in defaults, then
//! the `--config` TOML file, then individual flags.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::config::{Mode, RunConfig, Selector};
use super::run::{
    default_output_dir, run_convergence, run_optimization, run_simulation, run_sweep, run_verification, RunOutcome,
    VerifyChecks,
};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "convcool", version, about = "Optimal and feedback convection-cooling of a heated square")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward run without control or under the feedback law.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Control::None)]
        control: Control,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Open-loop optimal control by AA-Picard iteration.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Relative fixed-point residual tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Anderson memory depth (0 for plain Picard).
        #[arg(long)]
        memory: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        coarsest_mesh: Option<usize>,
        #[arg(long)]
        coarsest_steps: Option<usize>,
    },
    /// Feedback runs over a grid of τ values.
    SweepTau {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tau_min: Option<f64>,
        #[arg(long)]
        tau_max: Option<f64>,
        #[arg(long)]
        tau_step: Option<f64>,
    },
    /// Adjoint gradient and Hessian against finite differences.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gradient: bool,
        #[arg(long)]
        hessian: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        directions: Option<usize>,
    },
    /// Manufactured-solution convergence tables.
    Convergence {
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Control {
    None,
    Feedback,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory (default: $CONVCOOL_OUTPUT_ROOT/<tag> or runs/<tag>).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Built-in initial condition 1, 2 or 3.
    #[arg(long, conflicts_with = "initial_file")]
    pub example: Option<u8>,
    /// Snapshot file (flat binary with .txt header) used as initial condition.
    #[arg(long)]
    pub initial_file: Option<PathBuf>,
    /// Cells per side.
    #[arg(long)]
    pub mesh: Option<usize>,
    /// Time steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub stokes_tol: Option<f64>,
    /// Comma-separated snapshot times.
    #[arg(long, value_delimiter = ',')]
    pub snapshot_times: Option<Vec<f64>>,
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

impl Common {
    fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                base.overlay_toml(&text)?
            }
            None => base,
        };
        if let Some(n) = self.example {
            cfg.initial = match n {
                1 => Selector::Example1,
                2 => Selector::Example2,
                3 => Selector::Example3,
                _ => return Err(Error::InvalidConfig(format!("unknown example {n}; expected 1, 2 or 3"))),
            };
            cfg.initial_path = None;
        }
        if let Some(p) = &self.initial_file {
            cfg.initial = Selector::File;
            cfg.initial_path = Some(p.clone());
        }
        set(&mut cfg.mesh, self.mesh);
        set(&mut cfg.steps, self.steps);
        set(&mut cfg.kappa, self.kappa);
        set(&mut cfg.alpha, self.alpha);
        set(&mut cfg.beta, self.beta);
        set(&mut cfg.gamma, self.gamma);
        set(&mut cfg.t_final, self.t_final);
        set(&mut cfg.stokes_tol, self.stokes_tol);
        set(&mut cfg.snapshot_times, self.snapshot_times.clone());
        Ok(cfg)
    }

    fn output_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.output.clone().unwrap_or_else(|| default_output_dir(cfg))
    }
}

fn with_mode(mode: Mode) -> RunConfig {
    RunConfig { mode, ..RunConfig::default() }
}

/// Resolves the configuration and runs the selected command.
pub fn execute(cli: Cli) -> Result<RunOutcome> {
    match cli.command {
        Command::Simulate { common, control, tau } => {
            let mut cfg = common.resolve(RunConfig::default())?;
            cfg.mode = match control {
                Control::None => Mode::None,
                Control::Feedback => Mode::Feedback,
            };
            set(&mut cfg.tau, tau);
            run_simulation(&cfg, &common.output_dir(&cfg))
        }
        Command::Optimize { common, tol, memory, max_iter, coarsest_mesh, coarsest_steps } => {
            let mut cfg = common.resolve(with_mode(Mode::Optimal))?;
            cfg.mode = Mode::Optimal;
            set(&mut cfg.tol, tol);
            set(&mut cfg.anderson_memory, memory);
            set(&mut cfg.max_iter, max_iter);
            set(&mut cfg.coarsest_mesh, coarsest_mesh);
            set(&mut cfg.coarsest_steps, coarsest_steps);
            run_optimization(&cfg, &common.output_dir(&cfg), |r| {
                log::info!(
                    "level {} iteration {}: residual {:.3e}, J = {:.6} ({})",
                    r.level,
                    r.iteration,
                    r.residual,
                    r.objective,
                    r.step
                )
            })
        }
        Command::SweepTau { common, tau_min, tau_max, tau_step } => {
            let mut cfg = common.resolve(with_mode(Mode::Sweep))?;
            cfg.mode = Mode::Sweep;
            set(&mut cfg.tau_min, tau_min);
            set(&mut cfg.tau_max, tau_max);
            set(&mut cfg.tau_step, tau_step);
            run_sweep(&cfg, &common.output_dir(&cfg))
        }
        Command::Verify { common, gradient, hessian, seed, directions } => {
            let base = RunConfig { mesh: 20, steps: 20, ..with_mode(Mode::Verify) };
            let mut cfg = common.resolve(base)?;
            cfg.mode = Mode::Verify;
            set(&mut cfg.seed, seed);
            set(&mut cfg.directions, directions);
            let checks = if gradient || hessian {
                VerifyChecks { gradient, hessian }
            } else {
                VerifyChecks { gradient: true, hessian: true }
            };
            run_verification(&cfg, checks, &common.output_dir(&cfg))
        }
        Command::Convergence { output } => {
            let cfg = with_mode(Mode::Verify);
            let dir = output.unwrap_or_else(|| default_output_dir(&cfg).with_file_name("convergence"));
            run_convergence(&cfg, &dir)
        }
    }
}

/// Parses `args`, runs, prints results, and returns the process exit code:
/// 0 on success, 2 for configuration errors, 3 for solver failures, 4 for
/// I/O failures. Errors are also reported as one JSON line on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("outputs: {}", outcome.dir.display());
            0
        }
        Err(e) => {
            let cat = e.category();
            eprintln!("error: {e}");
            eprintln!("{}", serde_json::json!({ "error": { "category": cat.label(), "code": cat as i32, "message": e.to_string() } }));
            cat as i32
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("convcool").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "gamma = 0.5\nmesh = 40\ninitial = \"example2\"\n").unwrap();
        let cli = parse(&["simulate", "--config", path.to_str().unwrap(), "--mesh", "20", "--example", "3"]);
        let Command::Simulate { common, .. } = cli.command else { panic!() };
        let cfg = common.resolve(RunConfig::default()).unwrap();
        assert_eq!((cfg.mesh, cfg.gamma, cfg.initial), (20, 0.5, Selector::Example3));
    }

    #[test]
    fn bad_arguments_exit_with_config_code() {
        assert_eq!(run(["convcool", "simulate", "--mesh", "abc"]), 2);
        assert_eq!(run(["convcool", "simulate", "--example", "7", "--output", "/nonexistent/x"]), 2);
        assert_eq!(run(["convcool", "--help"]), 0);
    }
}
