//! Python bindings: model helpers, the discrete parameterization and the
//! closed-loop simulator.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use flatsample::discretize::{implicit_step as step_implicit, ImplicitStepSettings};
use flatsample::param::Scheme;
use flatsample::sim::{self, Metrics, SimRecord, COLUMNS};
use flatsample::vtol::{self as model, StageSolverKind};
use flatsample::window::ShiftWindow;
use flatsample::{Error, Vector};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Dimension { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn scheme(name: &str) -> PyResult<Scheme> {
    name.parse().map_err(|e: Error| PyValueError::new_err(e.to_string()))
}

fn vector(xs: Vec<f64>, len: usize, what: &str) -> PyResult<Vector> {
    if xs.len() != len {
        return Err(PyValueError::new_err(format!("{what} needs {len} entries, got {}", xs.len())));
    }
    Ok(Vector::from_vec(xs))
}

#[pyclass(name = "VtolParams", from_py_object)]
#[derive(Clone, Copy, Default)]
struct PyParams {
    inner: model::VtolParams,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (m = 1.0, j = 0.1, l = 0.2, h = 0.05, alpha = 0.3, g = 9.81))]
    fn new(m: f64, j: f64, l: f64, h: f64, alpha: f64, g: f64) -> PyResult<Self> {
        let inner = model::VtolParams { m, j, l, h, alpha, g };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn m(&self) -> f64 {
        self.inner.m
    }
    #[getter]
    fn j(&self) -> f64 {
        self.inner.j
    }
    #[getter]
    fn l(&self) -> f64 {
        self.inner.l
    }
    #[getter]
    fn h(&self) -> f64 {
        self.inner.h
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }
    #[getter]
    fn g(&self) -> f64 {
        self.inner.g
    }

    /// Offset of the flat output from the center of mass.
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    fn hover_thrust(&self) -> f64 {
        self.inner.hover_thrust()
    }

    /// Right-hand side of the original model.
    fn dynamics(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let (x, u) = (vector(x, 6, "x")?, vector(u, 2, "u")?);
        Ok(model::vtol_dynamics(&self.inner, &x, &u).as_slice().to_vec())
    }

    /// Original state -> `(y1, y2, v1, v2, theta, omega)`.
    fn flat_state(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(model::state_fwd(&self.inner, &vector(x, 6, "x")?).as_slice().to_vec())
    }

    fn original_state(&self, xbar: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(model::state_inv(&self.inner, &vector(xbar, 6, "xbar")?).as_slice().to_vec())
    }

    /// One implicit Euler step of the original model.
    fn implicit_step(&self, x: Vec<f64>, u: Vec<f64>, ts: f64) -> PyResult<Vec<f64>> {
        let (x, u) = (vector(x, 6, "x")?, vector(u, 2, "u")?);
        let sys = model::vtol_system(&self.inner).map_err(py_err)?;
        let settings = ImplicitStepSettings::new(ts).map_err(py_err)?;
        let (next, _) = step_implicit(&sys, &x, &u, &settings, None).map_err(py_err)?;
        Ok(next.as_slice().to_vec())
    }

    /// First and last shift used by the parameterization for `scheme`.
    fn window_range(&self, scheme_name: &str, ts: f64) -> PyResult<(i64, i64)> {
        let map = model::vtol_parameterizer(&self.inner, scheme(scheme_name)?, ts, StageSolverKind::ClosedForm)
            .map_err(py_err)?;
        Ok(map.window_range())
    }

    /// Transformed state and input from flat-output samples covering
    /// `window_range`, oldest first.
    fn parameterize(&self, window: Vec<Vec<f64>>, scheme_name: &str, ts: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let scheme = scheme(scheme_name)?;
        let map = model::vtol_parameterizer(&self.inner, scheme, ts, StageSolverKind::ClosedForm).map_err(py_err)?;
        let (lo, hi) = map.window_range();
        if window.len() as i64 != hi - lo + 1 {
            return Err(PyValueError::new_err(format!(
                "window needs {} samples (shifts {lo}..={hi}), got {}",
                hi - lo + 1,
                window.len()
            )));
        }
        let samples = window.into_iter().map(|y| vector(y, 2, "flat output")).collect::<PyResult<_>>()?;
        let w = ShiftWindow::new(lo, samples).map_err(py_err)?;
        let point = map.evaluate(&w).map_err(py_err)?;
        Ok((point.state.as_slice().to_vec(), point.input.as_slice().to_vec()))
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!("VtolParams(m={}, j={}, l={}, h={}, alpha={}, g={})", p.m, p.j, p.l, p.h, p.alpha, p.g)
    }
}

#[pyclass(name = "SimConfig", from_py_object)]
#[derive(Clone, Default)]
struct PyConfig {
    inner: sim::SimConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, optionally overridden by a TOML document.
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => sim::SimConfig::from_toml_str(t).map_err(py_err)?,
            None => sim::SimConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: sim::SimConfig::load(&path).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(py_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    #[getter]
    fn ts(&self) -> f64 {
        self.inner.ts
    }
    #[setter]
    fn set_ts(&mut self, v: f64) {
        self.inner.ts = v;
    }
    #[getter]
    fn tn(&self) -> f64 {
        self.inner.tn
    }
    #[setter]
    fn set_tn(&mut self, v: f64) {
        self.inner.tn = v;
    }
    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }
    #[setter]
    fn set_duration(&mut self, v: f64) {
        self.inner.duration = v;
    }
    #[getter]
    fn scheme(&self) -> String {
        self.inner.scheme.to_string()
    }
    #[setter]
    fn set_scheme(&mut self, v: &str) -> PyResult<()> {
        self.inner.scheme = scheme(v)?;
        Ok(())
    }
    #[getter]
    fn params(&self) -> PyParams {
        PyParams { inner: self.inner.params }
    }
    #[setter]
    fn set_params(&mut self, p: PyParams) {
        self.inner.params = p.inner;
    }
    #[getter]
    fn initial_offset(&self) -> Vec<f64> {
        self.inner.initial_offset.clone()
    }
    #[setter]
    fn set_initial_offset(&mut self, v: Vec<f64>) {
        self.inner.initial_offset = v;
    }
}

/// Record as a column dict keyed by the CSV header.
fn columns<'py>(py: Python<'py>, rec: &SimRecord) -> PyResult<Bound<'py, PyDict>> {
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(rec.samples.len()); COLUMNS.len() - 1];
    for s in &rec.samples {
        let values = [s.k as f64, s.time]
            .into_iter()
            .chain([&s.x, &s.xbar, &s.z, &s.u, &s.yd, &s.y_estimate, &s.flat_error, &s.position_error].into_iter().flatten().copied())
            .chain([f64::from(u8::from(s.fault_latched))]);
        for (c, v) in cols.iter_mut().zip(values) {
            c.push(v);
        }
    }
    let d = PyDict::new(py);
    let names = COLUMNS.iter().filter(|c| **c != "fault");
    for (name, c) in names.zip(cols) {
        d.set_item(*name, c)?;
    }
    let faults: Vec<Option<String>> = rec.samples.iter().map(|s| s.fault.map(|f| f.to_string())).collect();
    d.set_item("fault", faults)?;
    Ok(d)
}

fn metrics<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scheme", m.scheme.to_string())?;
    d.set_item("ts", m.ts)?;
    d.set_item("rms_flat_error", m.rms_flat_error)?;
    d.set_item("max_flat_error", m.max_flat_error)?;
    d.set_item("flat_settling_index", m.flat_settling_index)?;
    d.set_item("rms_position_error", m.rms_position_error)?;
    d.set_item("max_position_error", m.max_position_error)?;
    d.set_item("position_settling_index", m.position_settling_index)?;
    d.set_item("fault_count", m.fault_count)?;
    d.set_item("bounded", m.bounded)?;
    Ok(d)
}

/// Closed-loop run. Returns `(columns, metrics)`; writes CSV and sidecar when
/// `out` is given.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn simulate<'py>(py: Python<'py>, config: &PyConfig, out: Option<PathBuf>) -> PyResult<(Bound<'py, PyDict>, Bound<'py, PyDict>)> {
    let cfg = config.inner.clone();
    let rec = py.detach(|| sim::run_closed_loop(&cfg)).map_err(py_err)?;
    if let Some(path) = out {
        sim::export_csv(&rec, &path).map_err(py_err)?;
    }
    Ok((columns(py, &rec)?, metrics(py, &sim::compute_metrics(&rec))?))
}

/// Both schemes on the same maneuver; returns `(implicit, explicit)` metrics.
#[pyfunction]
fn compare<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<(Bound<'py, PyDict>, Bound<'py, PyDict>)> {
    let cfg = config.inner.clone();
    let cmp = py.detach(|| sim::compare_schemes(&cfg)).map_err(py_err)?;
    Ok((metrics(py, &cmp.implicit_metrics)?, metrics(py, &cmp.explicit_metrics)?))
}

/// Metrics for both schemes over `config.sweep_ts`.
#[pyfunction]
fn sweep<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.inner.clone();
    let rows = py.detach(|| sim::sweep(&cfg)).map_err(py_err)?;
    rows.iter().map(|m| metrics(py, m)).collect()
}

/// Identity checks; one `(name, passed, detail)` per check.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn validate(py: Python<'_>, config: Option<&PyConfig>) -> Vec<(String, bool, String)> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    py.detach(|| flatsample::validate::run_validation(&cfg))
        .into_iter()
        .map(|o| (o.name.to_string(), o.passed, o.detail))
        .collect()
}

#[pymodule]
fn pyflatsample(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add("COLUMNS", COLUMNS.to_vec())?;
    Ok(())
}
