//! Python bindings. Reports come back as plain dicts built from the same JSON
//! the CLI prints.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use ::priority_shed as core;
use core::criticality::build_ccf;
use core::netgraph::{metropolis_weights, EdgeSet};
use core::oracle::{self, LoadPoint};
use core::scenario::{self, GeneratorParams, GraphSpec, ScenarioConfig};

fn py_err(e: core::Error) -> PyErr {
    match e {
        core::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A validated scenario.
#[pyclass(name = "Scenario", module = "priority_shed")]
struct PyScenario {
    config: ScenarioConfig,
    resolved: scenario::Scenario,
}

impl PyScenario {
    fn wrap(config: ScenarioConfig) -> PyResult<Self> {
        let resolved = config.resolve().map_err(py_err)?;
        Ok(PyScenario { config, resolved })
    }
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::wrap(ScenarioConfig::from_json(text).map_err(py_err)?)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::wrap(scenario::load_scenario(path).map_err(py_err)?)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        scenario::save_scenario(&self.config, path).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.config.to_json()
    }

    #[getter]
    fn regions(&self) -> usize {
        self.resolved.n()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.config.mode {
            scenario::Mode::Discrete => "discrete",
            scenario::Mode::Continuous => "continuous",
        }
    }

    #[getter]
    fn power_deficit(&self) -> f64 {
        self.config.power_deficit
    }

    /// Centralized oracle answer.
    fn solve<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let summary = py.detach(|| scenario::solve_scenario(&self.resolved)).map_err(py_err)?;
        to_py(py, &summary)
    }

    /// Oracle plus distributed run. Writes the CSV trace when `trace` is given.
    #[pyo3(signature = (trace=None, certify=false))]
    fn run<'py>(&self, py: Python<'py>, trace: Option<PathBuf>, certify: bool) -> PyResult<Bound<'py, PyAny>> {
        let sc = &self.resolved;
        let report = py
            .detach(|| {
                let (mut report, run) = scenario::run_scenario(sc, trace.is_some())?;
                if certify {
                    report.attach_certificate(&scenario::certify(sc)?);
                }
                if let Some(path) = &trace {
                    scenario::emit_trace(&run, path)?;
                }
                Ok(report)
            })
            .map_err(py_err)?;
        to_py(py, &report)
    }

    /// Every convergence condition, checked numerically.
    fn certify<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let cert = py.detach(|| scenario::certify(&self.resolved)).map_err(py_err)?;
        to_py(py, &cert)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(mode={:?}, regions={}, power_deficit={})",
            self.mode(),
            self.resolved.n(),
            self.config.power_deficit
        )
    }
}

/// Seeded random discrete scenario. Random links replace the line graph when
/// `edge_probability` is given.
#[pyfunction]
#[pyo3(signature = (regions, loads, seed=0, deficit_fraction=0.4, edge_probability=None, window=5, max_rounds=None))]
fn generate(
    regions: usize,
    loads: usize,
    seed: u64,
    deficit_fraction: f64,
    edge_probability: Option<f64>,
    window: usize,
    max_rounds: Option<usize>,
) -> PyResult<PyScenario> {
    let mut params = GeneratorParams::new(regions, loads, seed);
    params.deficit_fraction = deficit_fraction;
    if let Some(p) = edge_probability {
        params.graph = GraphSpec::Random {
            edge_probability: p,
            window,
        };
    }
    if let Some(r) = max_rounds {
        params.max_rounds = r;
    }
    PyScenario::wrap(scenario::generate_scenario(&params))
}

fn load_points(loads: Vec<(u64, f64, f64)>) -> Vec<LoadPoint> {
    loads.into_iter().map(|(id, p, c)| LoadPoint::new(id, p, c)).collect()
}

/// Optimal priority-based shedding for `(id, power, criticality)` loads.
#[pyfunction]
#[pyo3(signature = (loads, deficit, ramp_width=None))]
fn solve<'py>(
    py: Python<'py>,
    loads: Vec<(u64, f64, f64)>,
    deficit: f64,
    ramp_width: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let sol = oracle::solve(&load_points(loads), deficit, ramp_width).map_err(py_err)?;
    to_py(py, &sol)
}

/// Smallest-total subset covering `deficit`, with or without the priority
/// constraint. Exponential; at most 20 loads.
#[pyfunction]
#[pyo3(signature = (loads, deficit, priority=true))]
fn brute_force<'py>(
    py: Python<'py>,
    loads: Vec<(u64, f64, f64)>,
    deficit: f64,
    priority: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let loads = load_points(loads);
    let set = if priority {
        oracle::brute_force_priority_set(&loads, deficit)
    } else {
        oracle::brute_force_min_set(&loads, deficit)
    }
    .map_err(py_err)?;
    to_py(py, &set)
}

/// Closed-form continuous answer for `(capacity, criticality)` regions.
#[pyfunction]
fn continuous_solution<'py>(py: Python<'py>, regions: Vec<(f64, f64)>, deficit: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &oracle::continuous_solution(&regions, deficit).map_err(py_err)?)
}

/// `f(z)` for `(power, criticality)` pairs.
#[pyfunction]
fn ccf_eval(pairs: Vec<(f64, f64)>, z: f64) -> PyResult<f64> {
    Ok(build_ccf(&pairs).map_err(py_err)?.eval(z))
}

/// Metropolis-Hastings mixing matrix as nested lists.
#[pyfunction]
fn mixing_matrix(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Vec<Vec<f64>>> {
    let mut set = EdgeSet::new();
    for (a, b) in edges {
        set.insert(a, b);
    }
    let w = metropolis_weights(&set, n).map_err(py_err)?;
    Ok((0..n).map(|i| (0..n).map(|j| w.get(i, j)).collect()).collect())
}

#[pymodule]
fn priority_shed(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force, m)?)?;
    m.add_function(wrap_pyfunction!(continuous_solution, m)?)?;
    m.add_function(wrap_pyfunction!(ccf_eval, m)?)?;
    m.add_function(wrap_pyfunction!(mixing_matrix, m)?)?;
    m.add("TRACE_HEADER", scenario::TRACE_HEADER)?;
    Ok(())
}
