//! Initial temperature distributions, sampled at cell centres.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{restrict_scalar, GridSpec, ScalarField};
use crate::io::read_snapshot;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "selector", content = "path")]
pub enum InitialCondition {
    /// One smoothed hot spot centred at `(0.25, 0.25)`.
    Example1,
    /// Hot spots at `(0.25, 0.25)` and `(0.75, 0.25)`.
    Example2,
    /// `10` on `[0,½)² ∪ (½,1]²`, `0` elsewhere.
    Example3,
    /// A snapshot file (flat binary plus `.txt` header).
    File(PathBuf),
}

impl InitialCondition {
    pub fn from_example(n: u8) -> Result<Self> {
        match n {
            1 => Ok(InitialCondition::Example1),
            2 => Ok(InitialCondition::Example2),
            3 => Ok(InitialCondition::Example3),
            _ => Err(Error::InvalidConfig(format!("unknown example {n}; expected 1, 2 or 3"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            InitialCondition::Example1 => "example1".into(),
            InitialCondition::Example2 => "example2".into(),
            InitialCondition::Example3 => "example3".into(),
            InitialCondition::File(p) => format!("file:{}", p.display()),
        }
    }
}

fn hot_spot(x: f64, y: f64, cx: f64, cy: f64) -> f64 {
    10.0 * (0.5 + (10.0 * (1.0 - 32.0 * (x - cx).powi(2) - 16.0 * (y - cy).powi(2))).atan() / PI)
}

pub fn example1(x: f64, y: f64) -> f64 {
    hot_spot(x, y, 0.25, 0.25)
}

pub fn example2(x: f64, y: f64) -> f64 {
    hot_spot(x, y, 0.25, 0.25) + hot_spot(x, y, 0.75, 0.25)
}

pub fn example3(x: f64, y: f64) -> f64 {
    let lower = x < 0.5 && y < 0.5;
    let upper = x > 0.5 && y > 0.5;
    if lower || upper {
        10.0
    } else {
        0.0
    }
}

pub fn build_initial_condition(ic: &InitialCondition, grid: GridSpec) -> Result<ScalarField> {
    match ic {
        InitialCondition::Example1 => Ok(ScalarField::from_fn(grid, example1)),
        InitialCondition::Example2 => Ok(ScalarField::from_fn(grid, example2)),
        InitialCondition::Example3 => Ok(ScalarField::from_fn(grid, example3)),
        InitialCondition::File(path) => load_on_grid(path, grid),
    }
}

/// Loads a snapshot and, if it is finer than `grid` by a power of two,
/// restricts it by repeated 2×2 averaging.
fn load_on_grid(path: &Path, grid: GridSpec) -> Result<ScalarField> {
    let (mut field, _) = read_snapshot(path)?;
    while field.grid() != grid {
        let g = field.grid();
        if g.nx() % 2 != 0 || g.ny() % 2 != 0 || g.nx() / 2 < grid.nx() || g.ny() / 2 < grid.ny() {
            return Err(Error::ShapeMismatch(format!(
                "initial condition file {} is {}x{}, which does not reduce to {}x{}",
                path.display(),
                field.grid().nx(),
                field.grid().ny(),
                grid.nx(),
                grid.ny()
            )));
        }
        field = restrict_scalar(&field, GridSpec::new(g.nx() / 2, g.ny() / 2)?)?;
    }
    Ok(field)
}
