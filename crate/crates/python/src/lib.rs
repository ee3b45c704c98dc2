//! Python bindings for the bohmlab pipeline.
//!
//! Maps are returned as flat Python lists in site order (`index = j * nx + i`),
//! masked entries as NaN.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use bohmlab_core::calibration::{fit_linear_coupling, predict_phi, CalibSample, CouplingFit};
use bohmlab_core::field::{analytic_weak_values, WeakValueMap};
use bohmlab_core::grid::ScanGrid;
use bohmlab_core::pipeline::commands::{self, Context};
use bohmlab_core::pipeline::RunConfig;
use bohmlab_core::pointer::MeasurementSet;
use bohmlab_core::Error;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        3 => PyRuntimeError::new_err(e.to_string()),
        4 => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig(RunConfig);

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (seed = None, noiseless = false))]
    fn new(seed: Option<u64>, noiseless: bool) -> Self {
        let mut c = if noiseless { RunConfig::noiseless() } else { RunConfig::default() };
        if let Some(s) = seed {
            c.seed = s;
        }
        Self(c)
    }

    #[staticmethod]
    fn from_ini(text: &str) -> PyResult<Self> {
        RunConfig::parse(text).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RunConfig::load(&path).map(Self).map_err(py_err)
    }

    fn to_ini(&self) -> String {
        self.0.to_ini()
    }

    fn hash(&self) -> String {
        self.0.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    fn grid(&self) -> PyResult<PyScanGrid> {
        self.0.grid().map(PyScanGrid).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(seed={}, hash={})", self.0.seed, &self.0.hash()[..12])
    }
}

#[pyclass(name = "ScanGrid", frozen, from_py_object)]
#[derive(Clone)]
struct PyScanGrid(ScanGrid);

#[pymethods]
impl PyScanGrid {
    #[new]
    fn new(x0: f64, z0: f64, dx: f64, dz: f64, nx: usize, nz: usize) -> PyResult<Self> {
        ScanGrid::new(x0, z0, dx, dz, nx, nz).map(Self).map_err(py_err)
    }

    #[getter]
    fn x0(&self) -> f64 {
        self.0.x0
    }

    #[getter]
    fn z0(&self) -> f64 {
        self.0.z0
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx
    }

    #[getter]
    fn dz(&self) -> f64 {
        self.0.dz
    }

    #[getter]
    fn nx(&self) -> usize {
        self.0.nx
    }

    #[getter]
    fn nz(&self) -> usize {
        self.0.nz
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn site(&self, index: usize) -> PyResult<(f64, f64)> {
        if index >= self.0.len() {
            return Err(PyValueError::new_err(format!("site {index} outside a grid of {}", self.0.len())));
        }
        Ok(self.0.site(index))
    }

    fn sites(&self) -> Vec<(f64, f64)> {
        self.0.sites().collect()
    }

    fn __repr__(&self) -> String {
        format!("ScanGrid({} x {}, dx={:e}, dz={:e})", self.0.nx, self.0.nz, self.0.dx, self.0.dz)
    }
}

#[pyclass(name = "Measurements", frozen)]
struct PyMeasurements(MeasurementSet);

#[pymethods]
impl PyMeasurements {
    #[getter]
    fn grid(&self) -> PyScanGrid {
        PyScanGrid(self.0.grid)
    }

    #[getter]
    fn plate_count(&self) -> usize {
        self.0.plates.len()
    }

    /// H/V counts as (h, v) per record, plate index varying fastest.
    fn counts(&self) -> Vec<(f64, f64)> {
        self.0.counts.iter().map(|c| (c.h, c.v)).collect()
    }

    fn fringe_counts(&self) -> Vec<f64> {
        self.0.fringe_counts()
    }
}

#[pyclass(name = "WeakValues", frozen)]
struct PyWeakValues(WeakValueMap);

fn masked_list(values: &[f64], mask: &[bool]) -> Vec<f64> {
    values.iter().zip(mask).map(|(v, m)| if *m { f64::NAN } else { *v }).collect()
}

#[pymethods]
impl PyWeakValues {
    #[getter]
    fn grid(&self) -> PyScanGrid {
        PyScanGrid(self.0.grid)
    }

    #[getter]
    fn kx(&self) -> Vec<f64> {
        masked_list(&self.0.kx, &self.0.mask)
    }

    #[getter]
    fn kz(&self) -> Vec<f64> {
        masked_list(&self.0.kz, &self.0.mask)
    }

    #[getter]
    fn omega(&self) -> Vec<f64> {
        masked_list(&self.0.omega, &self.0.mask)
    }

    #[getter]
    fn mask(&self) -> Vec<bool> {
        self.0.mask.clone()
    }

    fn unmasked_count(&self) -> usize {
        self.0.unmasked_count()
    }
}

#[pyclass(name = "CouplingFit", frozen, get_all)]
struct PyCouplingFit {
    a: f64,
    b: f64,
    c: f64,
    a_se: f64,
    b_se: f64,
    c_se: f64,
    residual_rms: f64,
    n: usize,
}

impl From<CouplingFit> for PyCouplingFit {
    fn from(f: CouplingFit) -> Self {
        Self {
            a: f.a,
            b: f.b,
            c: f.c,
            a_se: f.a_se,
            b_se: f.b_se,
            c_se: f.c_se,
            residual_rms: f.residual_rms,
            n: f.n,
        }
    }
}

#[pymethods]
impl PyCouplingFit {
    fn predict(&self, k_perp: f64, omega: f64) -> f64 {
        let f = CouplingFit {
            a: self.a,
            b: self.b,
            c: self.c,
            a_se: self.a_se,
            b_se: self.b_se,
            c_se: self.c_se,
            residual_rms: self.residual_rms,
            n: self.n,
        };
        predict_phi(&f, k_perp, omega)
    }

    fn __repr__(&self) -> String {
        format!(
            "CouplingFit(a={:e} +- {:e}, b={:e} +- {:e}, c={} +- {})",
            self.a, self.a_se, self.b, self.b_se, self.c, self.c_se
        )
    }
}

/// Synthesizes the H/V counts of every site and plate.
#[pyfunction]
fn simulate(py: Python<'_>, config: &PyRunConfig) -> PyResult<PyMeasurements> {
    let cfg = config.0.clone();
    py.detach(|| commands::simulate_measurements(&cfg))
        .map(PyMeasurements)
        .map_err(py_err)
}

#[pyfunction]
fn invert(py: Python<'_>, config: &PyRunConfig, measurements: &PyMeasurements) -> PyResult<PyWeakValues> {
    let cfg = &config.0;
    let ms = &measurements.0;
    py.detach(|| commands::invert_measurements(cfg, ms))
        .map(PyWeakValues)
        .map_err(py_err)
}

/// Weak values of the configured field from its closed-form gradient.
#[pyfunction(name = "analytic_weak_values")]
fn analytic(config: &PyRunConfig) -> PyResult<PyWeakValues> {
    let cfg = &config.0;
    let ifm = cfg.interferometer().map_err(py_err)?;
    let grid = cfg.grid().map_err(py_err)?;
    analytic_weak_values(&ifm, &grid).map(PyWeakValues).map_err(py_err)
}

/// (vx, vz) in units of c.
#[pyfunction]
fn velocity(config: &PyRunConfig, weak_values: &PyWeakValues) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let vm = commands::velocity_map(&config.0, &weak_values.0).map_err(py_err)?;
    Ok((masked_list(&vm.vx, &vm.mask), masked_list(&vm.vz, &vm.mask)))
}

#[pyfunction]
fn effective_mass_sq(config: &PyRunConfig, weak_values: &PyWeakValues) -> PyResult<Vec<f64>> {
    let mm = commands::mass_map(&config.0, &weak_values.0).map_err(py_err)?;
    Ok(masked_list(&mm.m2, &mm.mask))
}

/// Streamlines seeded on the configured entry edge, one point list each.
#[pyfunction]
fn trajectories(
    py: Python<'_>,
    config: &PyRunConfig,
    weak_values: &PyWeakValues,
    intensity: Vec<f64>,
) -> PyResult<Vec<Vec<(f64, f64)>>> {
    let cfg = &config.0;
    let wv = &weak_values.0;
    py.detach(|| {
        let vm = commands::velocity_map(cfg, wv)?;
        commands::trace(cfg, &vm, &intensity)
    })
    .map(|ts| ts.into_iter().map(|t| t.points).collect())
    .map_err(py_err)
}

/// Continuity residual maps and their widths.
#[pyfunction]
fn continuity(
    py: Python<'_>,
    config: &PyRunConfig,
    counts: Vec<f64>,
    weak_values: &PyWeakValues,
) -> PyResult<HashMap<String, Py<PyAny>>> {
    let cfg = &config.0;
    let wv = &weak_values.0;
    let rep = py
        .detach(|| commands::residuals(cfg, &counts, wv))
        .map_err(py_err)?;
    let mut out = HashMap::new();
    out.insert("r_e".to_string(), rep.r_e.into_pyobject(py)?.into_any().unbind());
    out.insert("r_n".to_string(), rep.r_n.into_pyobject(py)?.into_any().unbind());
    for (key, stats) in [("e", &rep.relativistic), ("n", &rep.nonrelativistic)] {
        out.insert(format!("sigma_{key}"), stats.sigma().into_pyobject(py)?.into_any().unbind());
        out.insert(format!("center_{key}"), stats.center().into_pyobject(py)?.into_any().unbind());
    }
    Ok(out)
}

/// Least-squares fit of phi = a k_perp + b omega + c.
#[pyfunction]
fn fit_coupling(k_perp: Vec<f64>, omega: Vec<f64>, phi: Vec<f64>) -> PyResult<PyCouplingFit> {
    if k_perp.len() != omega.len() || k_perp.len() != phi.len() {
        return Err(PyValueError::new_err("k_perp, omega and phi differ in length"));
    }
    let samples: Vec<CalibSample> = k_perp
        .iter()
        .zip(&omega)
        .zip(&phi)
        .map(|((k, w), p)| CalibSample::new(*k, *w, *p))
        .collect();
    fit_linear_coupling(&samples).map(Into::into).map_err(py_err)
}

#[pyfunction]
fn phi_from_counts(i_h: f64, i_v: f64) -> PyResult<f64> {
    bohmlab_core::pointer::phi_from_counts(i_h, i_v).map_err(py_err)
}

/// Largest relative deviation between two weak-value maps and the number of
/// sites compared.
#[pyfunction]
fn max_weak_value_deviation(measured: &PyWeakValues, reference: &PyWeakValues) -> (f64, usize) {
    commands::max_weak_value_deviation(&measured.0, &reference.0)
}

/// Runs every stage into `out` and returns the report text.
#[pyfunction]
#[pyo3(signature = (config, out, threads = 0))]
fn run_pipeline(py: Python<'_>, config: &PyRunConfig, out: PathBuf, threads: usize) -> PyResult<String> {
    let cfg = config.0.clone();
    py.detach(|| {
        let ctx = Context::new(cfg, out)?;
        commands::with_threads(threads, || {
            commands::cmd_simulate(&ctx)?;
            commands::cmd_calibrate(&ctx, &[], 0.01)?;
            commands::cmd_invert(&ctx, None)?;
            commands::cmd_trajectories(&ctx, None, None)?;
            commands::cmd_mass(&ctx, None)?;
            commands::cmd_continuity(&ctx, None, None)?;
            commands::cmd_report(&ctx, None)
        })?
    })
    .map_err(py_err)
}

#[pymodule]
fn bohmlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyScanGrid>()?;
    m.add_class::<PyMeasurements>()?;
    m.add_class::<PyWeakValues>()?;
    m.add_class::<PyCouplingFit>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(invert, m)?)?;
    m.add_function(wrap_pyfunction!(analytic, m)?)?;
    m.add_function(wrap_pyfunction!(velocity, m)?)?;
    m.add_function(wrap_pyfunction!(effective_mass_sq, m)?)?;
    m.add_function(wrap_pyfunction!(trajectories, m)?)?;
    m.add_function(wrap_pyfunction!(continuity, m)?)?;
    m.add_function(wrap_pyfunction!(fit_coupling, m)?)?;
    m.add_function(wrap_pyfunction!(phi_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(max_weak_value_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("REFERENCE_SIGMA_E", commands::REFERENCE_SIGMA_E)?;
    m.add("REFERENCE_SIGMA_N", commands::REFERENCE_SIGMA_N)?;
    Ok(())
}
