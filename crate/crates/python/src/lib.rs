//! Python bindings for the supermodel crate.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use supermodel::engine::{self, TrainingConfig};
use supermodel::experiment::{self, ExperimentConfig as CoreConfig};
use supermodel::theory::{self, RateBound};
use supermodel::{Error, GroundTruth, LogisticParams, LogisticSystem, SubModelEnsemble, VectorState};

create_exception!(supermodel, BlowUpError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::BlowUp { .. } | Error::TrainingBlowUp { .. } => BlowUpError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "CouplingMatrix", module = "supermodel", from_py_object)]
#[derive(Clone)]
struct PyCoupling {
    inner: engine::CouplingMatrix,
}

#[pymethods]
impl PyCoupling {
    #[new]
    #[pyo3(signature = (n, c_init=0.5, k=0.9, a=1.0, c_min=0.1, c_max=0.9))]
    fn new(n: usize, c_init: f64, k: f64, a: f64, c_min: f64, c_max: f64) -> PyResult<Self> {
        let inner = engine::CouplingMatrix::uniform(n, c_init, k, a, c_min, c_max).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Builds a matrix from `n*n` row-major entries; the diagonal is ignored.
    #[staticmethod]
    #[pyo3(signature = (n, entries, k=0.9, a=1.0, c_min=0.1, c_max=0.9))]
    fn from_entries(n: usize, entries: Vec<f64>, k: f64, a: f64, c_min: f64, c_max: f64) -> PyResult<Self> {
        let inner = engine::CouplingMatrix::from_entries(n, entries, k, a, c_min, c_max).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn k(&self) -> f64 {
        self.inner.k_nudge
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a_rate
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.inner.n();
        if i >= n || j >= n {
            return Err(PyValueError::new_err(format!("index ({i}, {j}) outside {n}x{n}")));
        }
        Ok(self.inner.get(i, j))
    }

    fn entries(&self) -> Vec<f64> {
        self.inner.entries().to_vec()
    }

    /// Off-diagonal `(i, j, value)` triples in row-major order.
    fn off_diagonal(&self) -> Vec<(usize, usize, f64)> {
        self.inner.off_diagonal().collect()
    }

    fn max_abs_diff(&self, other: &PyCoupling) -> f64 {
        self.inner.max_abs_diff(&other.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "CouplingMatrix(n={}, k={}, a={}, entries={:?})",
            self.inner.n(),
            self.inner.k_nudge,
            self.inner.a_rate,
            self.inner.entries()
        )
    }
}

/// Experiment settings, addressed by `section.key` names.
#[pyclass(name = "ExperimentConfig", module = "supermodel", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: CoreConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (overrides=None))]
    fn new(overrides: Option<Vec<String>>) -> PyResult<Self> {
        let mut inner = CoreConfig::default();
        inner.apply_overrides(&overrides.unwrap_or_default()).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::read(&path).map_err(to_py)?,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(to_py)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .to_doc()
            .get(key)
            .map(str::to_string)
            .ok_or_else(|| PyKeyError::new_err(key.to_string()))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in self.inner.to_doc().entries {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    /// The configuration file text.
    fn emit(&self) -> String {
        self.inner.emit()
    }
}

/// Trains, predicts and writes every artifact into `config.run.out`.
/// Returns a summary dictionary; a blow-up is reported under `blow_up`.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let o = py.detach(move || experiment::run_experiment(&cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("dir", o.dir.display().to_string())?;
    d.set_item("converged", o.converged)?;
    d.set_item("epochs_used", o.epochs_used)?;
    d.set_item("last_delta", o.last_delta)?;
    d.set_item("final_coupling", PyCoupling { inner: o.final_coupling })?;
    d.set_item("blow_up", o.blow_up)?;
    d.set_item("lipschitz_max", o.lipschitz_max)?;
    d.set_item("volume_difference", o.volume_difference)?;
    d.set_item("sign_changes", o.sign_changes)?;
    d.set_item("mean_volume_error_before", o.mean_volume_error_before)?;
    d.set_item("mean_volume_error_after", o.mean_volume_error_after)?;
    d.set_item("final_l2_before", o.final_l2_before)?;
    d.set_item("final_l2_after", o.final_l2_after)?;
    Ok(d)
}

type SweepResult = (Option<f64>, Vec<(f64, String)>);

/// Runs the free tumor model at each time step and returns
/// `(threshold, [(dt, status), ...])`; writes `cfl.csv` into `out`.
#[pyfunction]
#[pyo3(signature = (config, dts, steps=200, factor=10.0, out=None))]
fn cfl_sweep(
    py: Python<'_>,
    config: &PyConfig,
    dts: Vec<f64>,
    steps: usize,
    factor: f64,
    out: Option<PathBuf>,
) -> PyResult<SweepResult> {
    let cfg = config.inner.clone();
    let dir = out.unwrap_or_else(|| cfg.out.clone());
    let (threshold, rows) = py
        .detach(move || experiment::cfl_experiment(&cfg, &dts, steps, factor, &dir))
        .map_err(to_py)?;
    let rows = rows
        .into_iter()
        .map(|r| (r.dt, format!("{:?}", r.status).to_lowercase()))
        .collect();
    Ok((threshold, rows))
}

/// A logistic-growth ensemble on a vector of cells.
#[pyclass(name = "LogisticEnsemble", module = "supermodel")]
struct PyLogisticEnsemble {
    inner: SubModelEnsemble<LogisticSystem>,
}

fn logistic_gt(rate: f64, cap: f64, initial: &VectorState, dt: f64, steps: usize) -> PyResult<GroundTruth<LogisticParams>> {
    let p = LogisticParams::new(rate, cap).map_err(to_py)?;
    supermodel::generate_gt(&LogisticSystem, &p, initial, "u", dt, steps, 1).map_err(to_py)
}

#[pymethods]
impl PyLogisticEnsemble {
    #[new]
    #[pyo3(signature = (rates, initial, cap=2.0, cell_volume=1.0))]
    fn new(rates: Vec<f64>, initial: Vec<f64>, cap: f64, cell_volume: f64) -> PyResult<Self> {
        let params = rates
            .iter()
            .map(|&r| LogisticParams::new(r, cap))
            .collect::<supermodel::Result<Vec<_>>>()
            .map_err(to_py)?;
        let init = VectorState {
            values: initial,
            cell_volume,
        };
        let inner = SubModelEnsemble::new(LogisticSystem, params, init, "u").map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Trains against a logistic reference with growth rate `gt_rate`.
    /// Returns the trained matrix and the per-step supermodel error.
    #[pyo3(signature = (coupling, gt_rate, dt=0.1, steps=10, epochs=10, tol=1e-3))]
    fn train(
        &mut self,
        coupling: &PyCoupling,
        gt_rate: f64,
        dt: f64,
        steps: usize,
        epochs: usize,
        tol: f64,
    ) -> PyResult<(PyCoupling, Vec<f64>)> {
        let cap = self.inner.params[0].cap;
        let gt = logistic_gt(gt_rate, cap, &self.inner.initial, dt, steps)?;
        let cfg = TrainingConfig {
            dt,
            steps_per_epoch: steps,
            max_epochs: epochs,
            tol,
            record_trajectories: false,
        };
        let (cm, report) = engine::train(&mut self.inner, &coupling.inner, &gt, &cfg).map_err(to_py)?;
        Ok((PyCoupling { inner: cm }, report.error_history()))
    }

    /// Supermodel output at steps `0..=steps` with fixed coefficients.
    #[pyo3(signature = (coupling, gt_rate, dt=0.1, steps=10, nudge=true))]
    fn simulate(&mut self, coupling: &PyCoupling, gt_rate: f64, dt: f64, steps: usize, nudge: bool) -> PyResult<Vec<Vec<f64>>> {
        let cap = self.inner.params[0].cap;
        let gt = logistic_gt(gt_rate, cap, &self.inner.initial, dt, steps)?;
        let run = engine::simulate(&mut self.inner, &coupling.inner, &gt, dt, steps, nudge).map_err(to_py)?;
        Ok(run.coupled_trajectory(0))
    }
}

#[pyfunction]
fn alpha_const(k: f64, dt: f64, lipschitz_max: f64, coupling_spread: f64) -> f64 {
    theory::alpha_const(k, dt, lipschitz_max, coupling_spread)
}

#[pyfunction]
fn alpha_const_abs(k: f64, dt: f64, lipschitz_max: f64, coupling_spread: f64) -> f64 {
    theory::alpha_const_abs(k, dt, lipschitz_max, coupling_spread)
}

#[pyfunction]
fn beta_const(gt_dist_b: f64, gt_dist_d: f64) -> f64 {
    theory::beta_const(gt_dist_b, gt_dist_d)
}

#[pyfunction]
fn gamma_const(a: f64, gt_dist_b: f64, gt_dist_d: f64) -> f64 {
    theory::gamma_const(a, gt_dist_b, gt_dist_d)
}

/// `A / (1 − α)`, or `None` when `α ≥ 1`.
#[pyfunction]
fn rate_bound(a: f64, alpha: f64) -> Option<f64> {
    match theory::rate_bound(a, alpha) {
        RateBound::Finite(v) => Some(v),
        RateBound::Vacuous => None,
    }
}

/// Empirical Lipschitz constant of `S(u) = λu` on vectors of length `len`.
#[pyfunction]
#[pyo3(signature = (lam, len=4, samples=16, scale=1e-2, seed=0))]
fn lipschitz_linear(lam: f64, len: usize, samples: usize, scale: f64, seed: u64) -> PyResult<f64> {
    let template = VectorState::new(vec![0.0; len]);
    supermodel::estimate_lipschitz(&supermodel::LinearSystem, &lam, &template, samples, scale, seed).map_err(to_py)
}

#[pyfunction]
fn sign_changes(series: Vec<f64>) -> usize {
    supermodel::ground_truth::sign_changes(&series)
}

#[pymodule]
#[pyo3(name = "supermodel")]
fn supermodel_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BlowUpError", m.py().get_type::<BlowUpError>())?;
    m.add_class::<PyCoupling>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyLogisticEnsemble>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(cfl_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_const, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_const_abs, m)?)?;
    m.add_function(wrap_pyfunction!(beta_const, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_const, m)?)?;
    m.add_function(wrap_pyfunction!(rate_bound, m)?)?;
    m.add_function(wrap_pyfunction!(lipschitz_linear, m)?)?;
    m.add_function(wrap_pyfunction!(sign_changes, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_bound_maps_vacuous_to_none() {
        assert_eq!(rate_bound(1.0, 1.0), None);
        assert_eq!(rate_bound(0.5, 0.5), Some(1.0));
    }

    #[test]
    fn scalar_wrappers_forward() {
        assert!((alpha_const(0.9, 0.1, 2.0, 0.35) - 1.0).abs() < 1e-15);
        assert_eq!(beta_const(0.3, 0.5), 1.0);
        assert_eq!(sign_changes(vec![1.0, -2.0, 3.0]), 2);
    }
}
