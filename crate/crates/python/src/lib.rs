//! Python bindings. Fields cross the boundary as float64 NumPy arrays indexed
//! `[i, j]` with `i` along x: temperatures are `(nx, ny)`, horizontal
//! velocities `(nx + 1, ny)`, vertical velocities `(nx, ny + 1)`, and time
//! series stack a leading time axis.

use std::path::PathBuf;

use ndarray::{Array2, Array3, ArrayView3, Axis};
use numpy::{IntoPyArray, PyArray2, PyArray3, PyReadonlyArray2, PyReadonlyArray3};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use convcool::feedback::{simulate_closed_loop, FeedbackConfig};
use convcool::grid::{divergence, GridSpec, ScalarField, StaggeredVelocity, TimeGrid};
use convcool::initial::{build_initial_condition, InitialCondition};
use convcool::objective::{evaluate, CostWeights, ObjectiveBreakdown};
use convcool::optimize::{solve_optimal, OptimizeConfig};
use convcool::pde::{forward_solve, ControlTrajectory, Trajectory};
use convcool::stokes::{stokes_solve, DEFAULT_STOKES_TOL};
use convcool::{Error, ErrorCategory};

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.category() {
        ErrorCategory::Config => PyValueError::new_err(msg),
        ErrorCategory::Solver => PyRuntimeError::new_err(msg),
        ErrorCategory::Io => PyOSError::new_err(msg),
    }
}

fn initial_from(spec: &Bound<'_, PyAny>) -> PyResult<InitialCondition> {
    if let Ok(n) = spec.extract::<u8>() {
        return InitialCondition::from_example(n).map_err(to_py);
    }
    let path: PathBuf = spec.extract()?;
    Ok(InitialCondition::File(path))
}

fn objective_dict<'py>(py: Python<'py>, o: &ObjectiveBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("J", o.j_total)?;
    d.set_item("J_alpha", o.j_alpha)?;
    d.set_item("J_beta", o.j_beta)?;
    d.set_item("J_gamma", o.j_gamma)?;
    d.set_item("max_div", o.max_div)?;
    d.set_item("max_vel", o.max_vel)?;
    d.set_item("max_vel_uw", o.max_vel_uw)?;
    Ok(d)
}

fn stack<'a>(fields: impl Iterator<Item = &'a Array2<f64>>, n: usize, shape: (usize, usize)) -> Array3<f64> {
    let mut out = Array3::zeros((n, shape.0, shape.1));
    for (k, f) in fields.enumerate() {
        out.index_axis_mut(Axis(0), k).assign(f);
    }
    out
}

fn trajectory_array(t: &Trajectory) -> Array3<f64> {
    let g = t.grid();
    stack(t.fields().iter().map(|f| f.values()), t.fields().len(), (g.nx(), g.ny()))
}

fn control_arrays(v: &ControlTrajectory) -> (Array3<f64>, Array3<f64>) {
    let g = v.grid();
    let u = stack(v.entries().iter().map(|e| e.u()), v.len(), (g.nx() + 1, g.ny()));
    let w = stack(v.entries().iter().map(|e| e.w()), v.len(), (g.nx(), g.ny() + 1));
    (u, w)
}

type StokesArrays<'py> = (Bound<'py, PyArray2<f64>>, Bound<'py, PyArray2<f64>>, Bound<'py, PyArray2<f64>>);

/// Discretisation and cost parameters shared by every computation.
#[pyclass(module = "pyconvcool", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Problem {
    grid: GridSpec,
    timegrid: TimeGrid,
    weights: CostWeights,
    #[pyo3(get)]
    kappa: f64,
    #[pyo3(get)]
    stokes_tol: f64,
}

impl Problem {
    fn scalar(&self, a: PyReadonlyArray2<'_, f64>) -> PyResult<ScalarField> {
        ScalarField::from_values(self.grid, a.as_array().to_owned()).map_err(to_py)
    }

    fn controls(&self, u: ArrayView3<'_, f64>, w: ArrayView3<'_, f64>) -> PyResult<ControlTrajectory> {
        if u.len_of(Axis(0)) != w.len_of(Axis(0)) {
            return Err(PyValueError::new_err("u and w have different numbers of time entries"));
        }
        let entries = u
            .outer_iter()
            .zip(w.outer_iter())
            .map(|(ui, wi)| StaggeredVelocity::from_components(self.grid, ui.to_owned(), wi.to_owned()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py)?;
        ControlTrajectory::new(self.timegrid, entries).map_err(to_py)
    }

    fn control_or_zero(
        &self,
        u: Option<PyReadonlyArray3<'_, f64>>,
        w: Option<PyReadonlyArray3<'_, f64>>,
    ) -> PyResult<ControlTrajectory> {
        match (u, w) {
            (Some(u), Some(w)) => self.controls(u.as_array(), w.as_array()),
            (None, None) => Ok(ControlTrajectory::zeros(self.grid, self.timegrid)),
            _ => Err(PyValueError::new_err("give both u and w or neither")),
        }
    }
}

#[pymethods]
impl Problem {
    #[new]
    #[pyo3(signature = (mesh=160, steps=160, kappa=0.05, alpha=0.0, beta=1.0, gamma=0.025, t_final=1.0, stokes_tol=DEFAULT_STOKES_TOL))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        mesh: usize,
        steps: usize,
        kappa: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        t_final: f64,
        stokes_tol: f64,
    ) -> PyResult<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(PyValueError::new_err(format!("kappa must be positive, got {kappa}")));
        }
        Ok(Problem {
            grid: GridSpec::square(mesh).map_err(to_py)?,
            timegrid: TimeGrid::new(t_final, steps).map_err(to_py)?,
            weights: CostWeights::new(alpha, beta, gamma).map_err(to_py)?,
            kappa,
            stokes_tol,
        })
    }

    #[getter]
    fn mesh(&self) -> usize {
        self.grid.nx()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.timegrid.steps()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.timegrid.dt()
    }

    #[getter]
    fn weights(&self) -> (f64, f64, f64) {
        (self.weights.alpha, self.weights.beta, self.weights.gamma)
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(mesh={}, steps={}, kappa={}, alpha={}, beta={}, gamma={}, t_final={})",
            self.grid.nx(),
            self.timegrid.steps(),
            self.kappa,
            self.weights.alpha,
            self.weights.beta,
            self.weights.gamma,
            self.timegrid.t_final()
        )
    }

    /// Initial temperature: an example number (1, 2, 3) or a snapshot path.
    fn initial_condition<'py>(&self, py: Python<'py>, example: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let ic = initial_from(example)?;
        let t0 = build_initial_condition(&ic, self.grid).map_err(to_py)?;
        Ok(t0.into_values().into_pyarray(py))
    }

    /// Forward solve under a prescribed control (zero if omitted); returns
    /// the temperature at every time node.
    #[pyo3(signature = (t0, u=None, w=None))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        t0: PyReadonlyArray2<'py, f64>,
        u: Option<PyReadonlyArray3<'py, f64>>,
        w: Option<PyReadonlyArray3<'py, f64>>,
    ) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let t0 = self.scalar(t0)?;
        let v = self.control_or_zero(u, w)?;
        let kappa = self.kappa;
        let traj = py.detach(|| forward_solve(&v, &t0, kappa)).map_err(to_py)?;
        Ok(trajectory_array(&traj).into_pyarray(py))
    }

    /// Cost of a temperature history under a control (zero if omitted).
    #[pyo3(signature = (trajectory, u=None, w=None))]
    fn objective<'py>(
        &self,
        py: Python<'py>,
        trajectory: PyReadonlyArray3<'py, f64>,
        u: Option<PyReadonlyArray3<'py, f64>>,
        w: Option<PyReadonlyArray3<'py, f64>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let fields = trajectory
            .as_array()
            .outer_iter()
            .map(|f| ScalarField::from_values(self.grid, f.to_owned()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py)?;
        let traj = Trajectory::new(self.timegrid, fields).map_err(to_py)?;
        let v = self.control_or_zero(u, w)?;
        let o = evaluate(&traj, &v, self.weights).map_err(to_py)?;
        objective_dict(py, &o)
    }

    /// Velocity `(u, w)` and pressure of the Stokes problem with forcing `(fu, fw)`.
    fn stokes<'py>(
        &self,
        py: Python<'py>,
        fu: PyReadonlyArray2<'py, f64>,
        fw: PyReadonlyArray2<'py, f64>,
    ) -> PyResult<StokesArrays<'py>> {
        let force = StaggeredVelocity::from_components(self.grid, fu.as_array().to_owned(), fw.as_array().to_owned())
            .map_err(to_py)?;
        let (gamma, tol) = (self.weights.gamma, self.stokes_tol);
        let sol = py.detach(|| stokes_solve(&force, gamma, tol)).map_err(to_py)?;
        Ok((
            sol.velocity.u().clone().into_pyarray(py),
            sol.velocity.w().clone().into_pyarray(py),
            sol.pressure.into_values().into_pyarray(py),
        ))
    }

    /// Closed-loop run under the feedback law with gain `tau`.
    fn feedback<'py>(&self, py: Python<'py>, t0: PyReadonlyArray2<'py, f64>, tau: f64) -> PyResult<Bound<'py, PyDict>> {
        let t0 = self.scalar(t0)?;
        let mut cfg = FeedbackConfig::new(tau, self.kappa, self.weights, self.grid, self.timegrid).map_err(to_py)?;
        cfg.stokes_tol = self.stokes_tol;
        let run = py.detach(|| simulate_closed_loop(&cfg, &t0)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("tau", run.tau)?;
        d.set_item("objective", objective_dict(py, &run.objective)?)?;
        d.set_item("monotone", run.is_monotone())?;
        d.set_item("dT_l2", run.dt_norm.clone())?;
        d.set_item("mix_norm", run.mix_norm.clone())?;
        d.set_item("trajectory", trajectory_array(&run.trajectory).into_pyarray(py))?;
        let (u, w) = control_arrays(&run.control);
        d.set_item("u", u.into_pyarray(py))?;
        d.set_item("w", w.into_pyarray(py))?;
        d.set_item("wall_time", run.wall_time)?;
        Ok(d)
    }

    /// Open-loop optimal control by Anderson-accelerated Picard iteration
    /// with mesh continuation; `initial` is an example number or a path.
    #[pyo3(signature = (initial, tol=1e-5, memory=5, max_iter=200, coarsest=(10, 10)))]
    fn optimize<'py>(
        &self,
        py: Python<'py>,
        initial: &Bound<'py, PyAny>,
        tol: f64,
        memory: usize,
        max_iter: usize,
        coarsest: (usize, usize),
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut cfg = OptimizeConfig::new(self.grid, self.timegrid, initial_from(initial)?);
        cfg.kappa = self.kappa;
        cfg.weights = self.weights;
        cfg.tol = tol;
        cfg.memory = memory;
        cfg.max_iter = max_iter;
        cfg.coarsest = (coarsest.0, coarsest.0, coarsest.1);
        cfg.stokes_tol = self.stokes_tol;
        let res = py.detach(|| solve_optimal(&cfg)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("objective", objective_dict(py, &res.objective)?)?;
        d.set_item("iterations", res.iterations)?;
        d.set_item("total_iterations", res.total_iterations)?;
        d.set_item("residual_history", res.residual_history.clone())?;
        d.set_item("trajectory", trajectory_array(&res.state).into_pyarray(py))?;
        d.set_item("adjoint", trajectory_array(&res.adjoint).into_pyarray(py))?;
        let (u, w) = control_arrays(&res.v);
        d.set_item("u", u.into_pyarray(py))?;
        d.set_item("w", w.into_pyarray(py))?;
        d.set_item("wall_time", res.wall_time)?;
        Ok(d)
    }
}

/// Discrete divergence of a face velocity, one value per cell.
#[pyfunction]
fn divergence_of<'py>(
    py: Python<'py>,
    u: PyReadonlyArray2<'py, f64>,
    w: PyReadonlyArray2<'py, f64>,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let (nx, ny) = (w.as_array().nrows(), u.as_array().ncols());
    let grid = GridSpec::new(nx, ny).map_err(to_py)?;
    let v = StaggeredVelocity::from_components(grid, u.as_array().to_owned(), w.as_array().to_owned()).map_err(to_py)?;
    Ok(divergence(&v).into_values().into_pyarray(py))
}

#[pymodule]
pub fn pyconvcool(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(divergence_of, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
