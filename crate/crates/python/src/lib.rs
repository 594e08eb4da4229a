//! Python bindings for `psicert`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use psicert::bounds::{self, AnalyticBoundInputs, CertificateReport};
use psicert::controller::{Constraint, QpProblem, QpStatus};
use psicert::{cli, rollout, safety, Error};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::SolverInput(_) => PyValueError::new_err(e.to_string()),
        Error::Setup(_) | Error::Solver(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Experiment configuration. Built from a JSON document; missing keys take
/// their defaults and unknown keys are rejected.
#[pyclass(name = "ExperimentConfig", from_py_object)]
#[derive(Clone)]
struct PyExperimentConfig(rollout::ExperimentConfig);

#[pymethods]
impl PyExperimentConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let text = json.unwrap_or("{}");
        cli::parse_config(text, "<python>").map(Self).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        cli::load_config(std::path::Path::new(path)).map(Self).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.0).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.0)
    }

    fn config_hash(&self) -> String {
        cli::config_hash(&self.0)
    }

    fn rollout_seed(&self, group_index: usize, p: usize) -> u64 {
        self.0.rollout_seed(group_index, p)
    }

    #[getter]
    fn groups(&self) -> usize {
        self.0.groups
    }

    #[getter]
    fn rollouts_per_group(&self) -> usize {
        self.0.rollouts_per_group
    }

    #[getter]
    fn base_seed(&self) -> u64 {
        self.0.base_seed
    }

    #[getter]
    fn safety(&self) -> PySafetyParams {
        PySafetyParams(self.0.safety.clone())
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(groups={}, rollouts_per_group={}, n_agents={}, noise_bound={})",
            self.0.groups, self.0.rollouts_per_group, self.0.system.n_agents, self.0.system.noise_bound
        )
    }
}

#[pyclass(name = "SafetyParams", from_py_object)]
#[derive(Clone)]
struct PySafetyParams(safety::SafetyParams);

#[pymethods]
impl PySafetyParams {
    #[new]
    #[pyo3(signature = (psi = 2.0, reg_eps = 1e-6, d_min = 1.0, kappa = 1.0, robust_margin_enabled = true))]
    fn new(psi: f64, reg_eps: f64, d_min: f64, kappa: f64, robust_margin_enabled: bool) -> PyResult<Self> {
        let p = safety::SafetyParams { psi, reg_eps, d_min, kappa, robust_margin_enabled };
        p.validate().map_err(to_py_err)?;
        Ok(Self(p))
    }

    #[getter]
    fn psi(&self) -> f64 {
        self.0.psi
    }

    #[getter]
    fn reg_eps(&self) -> f64 {
        self.0.reg_eps
    }

    #[getter]
    fn d_min(&self) -> f64 {
        self.0.d_min
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.0.kappa
    }

    #[getter]
    fn robust_margin_enabled(&self) -> bool {
        self.0.robust_margin_enabled
    }

    fn __repr__(&self) -> String {
        format!("SafetyParams(psi={}, d_min={}, kappa={})", self.0.psi, self.0.d_min, self.0.kappa)
    }
}

fn params_or_default(params: Option<&PySafetyParams>) -> safety::SafetyParams {
    params.map(|p| p.0.clone()).unwrap_or_default()
}

fn same_dim(a: &[f64], b: &[f64]) -> PyResult<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(PyValueError::new_err("vectors must be non-empty and of equal length"));
    }
    Ok(())
}

#[pyfunction]
#[pyo3(signature = (x_i, x_j, params = None))]
fn h_pair(x_i: Vec<f64>, x_j: Vec<f64>, params: Option<&PySafetyParams>) -> PyResult<f64> {
    same_dim(&x_i, &x_j)?;
    Ok(safety::h_pair(&x_i, &x_j, &params_or_default(params)))
}

#[pyfunction]
#[pyo3(signature = (x_i, x_j, params = None))]
fn grad_h_pair(x_i: Vec<f64>, x_j: Vec<f64>, params: Option<&PySafetyParams>) -> PyResult<Vec<f64>> {
    same_dim(&x_i, &x_j)?;
    Ok(safety::grad_h_pair(&x_i, &x_j, &params_or_default(params)))
}

#[pyfunction]
#[pyo3(signature = (x_i, x_j, params = None))]
fn propagation_vector(x_i: Vec<f64>, x_j: Vec<f64>, params: Option<&PySafetyParams>) -> PyResult<Vec<f64>> {
    same_dim(&x_i, &x_j)?;
    Ok(safety::propagation_vector(&x_i, &x_j, &params_or_default(params)))
}

/// psi-weighted safety value; controls are given in state coordinates.
#[pyfunction]
#[pyo3(signature = (x_i, x_j, u_i, u_j, params = None))]
fn psi_safety(
    x_i: Vec<f64>,
    x_j: Vec<f64>,
    u_i: Vec<f64>,
    u_j: Vec<f64>,
    params: Option<&PySafetyParams>,
) -> PyResult<f64> {
    same_dim(&x_i, &x_j)?;
    same_dim(&x_i, &u_i)?;
    same_dim(&u_i, &u_j)?;
    Ok(safety::psi_safety(&x_i, &x_j, &u_i, &u_j, &params_or_default(params)))
}

#[pyfunction]
#[pyo3(signature = (x_i, x_j, w_bar, params = None))]
fn disturbance_margin(x_i: Vec<f64>, x_j: Vec<f64>, w_bar: f64, params: Option<&PySafetyParams>) -> PyResult<f64> {
    same_dim(&x_i, &x_j)?;
    Ok(safety::disturbance_margin(&x_i, &x_j, w_bar, &params_or_default(params)))
}

#[pyclass(name = "QpSolution", skip_from_py_object)]
struct PyQpSolution(psicert::QpSolution);

#[pymethods]
impl PyQpSolution {
    #[getter]
    fn u_star(&self) -> Vec<f64> {
        self.0.u_star.clone()
    }

    #[getter]
    fn active_set(&self) -> Vec<usize> {
        self.0.active_set.clone()
    }

    #[getter]
    fn duals(&self) -> Vec<f64> {
        self.0.duals.clone()
    }

    #[getter]
    fn slack_used(&self) -> f64 {
        self.0.slack_used
    }

    #[getter]
    fn status(&self) -> &'static str {
        match self.0.status {
            QpStatus::Optimal => "optimal",
            QpStatus::InfeasibleRelaxed => "infeasible_relaxed",
        }
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.0.objective()
    }

    fn __repr__(&self) -> String {
        format!("QpSolution(status={}, u_star={:?})", self.status(), self.0.u_star)
    }
}

/// Minimizes `|u|^2` subject to `a[k] . u >= b[k]`.
#[pyfunction]
#[pyo3(signature = (a, b, dim = None, tol = 1e-9))]
fn solve_qp(a: Vec<Vec<f64>>, b: Vec<f64>, dim: Option<usize>, tol: f64) -> PyResult<PyQpSolution> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("a and b must have the same number of rows"));
    }
    let dim = match (dim, a.first()) {
        (Some(d), _) => d,
        (None, Some(row)) => row.len(),
        (None, None) => return Err(PyValueError::new_err("dim is required when there are no constraints")),
    };
    let constraints = a.into_iter().zip(b).map(|(a, b)| Constraint { a, b }).collect();
    psicert::solve_qp(&QpProblem::new(dim, constraints), tol).map(PyQpSolution).map_err(to_py_err)
}

#[pyclass(name = "RolloutRecord", skip_from_py_object)]
struct PyRolloutRecord(rollout::RolloutRecord);

#[pymethods]
impl PyRolloutRecord {
    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn raw_min_margin(&self) -> f64 {
        self.0.raw_min_margin
    }

    #[getter]
    fn violated(&self) -> bool {
        self.0.violated
    }

    #[getter]
    fn min_distance(&self) -> f64 {
        self.0.min_distance
    }

    #[getter]
    fn infeasible_steps(&self) -> usize {
        self.0.infeasible_steps
    }

    #[getter]
    fn max_control_norm(&self) -> f64 {
        self.0.max_control_norm
    }

    /// Trajectory rows as dicts, or None when not recorded.
    #[getter]
    fn trajectory<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.0.trajectory.as_ref().map(|t| json_to_py(py, t)).transpose()
    }

    fn __repr__(&self) -> String {
        format!(
            "RolloutRecord(seed={}, raw_min_margin={}, min_distance={})",
            self.0.seed, self.0.raw_min_margin, self.0.min_distance
        )
    }
}

#[pyclass(name = "GroupRecord", skip_from_py_object)]
struct PyGroupRecord(rollout::GroupRecord);

#[pymethods]
impl PyGroupRecord {
    #[getter]
    fn group_index(&self) -> usize {
        self.0.group_index
    }

    #[getter]
    fn z_scores(&self) -> Vec<f64> {
        self.0.z_scores.clone()
    }

    #[getter]
    fn x_flags(&self) -> Vec<bool> {
        self.0.x_flags.clone()
    }

    #[getter]
    fn h_tilde_max(&self) -> f64 {
        self.0.h_tilde_max
    }

    #[getter]
    fn rollouts(&self) -> Vec<PyRolloutRecord> {
        self.0.rollouts.iter().cloned().map(PyRolloutRecord).collect()
    }

    fn __len__(&self) -> usize {
        self.0.rollouts.len()
    }
}

#[pyfunction]
#[pyo3(signature = (config, seed, record_trajectory = false))]
fn run_rollout(
    py: Python<'_>,
    config: &PyExperimentConfig,
    seed: u64,
    record_trajectory: bool,
) -> PyResult<PyRolloutRecord> {
    let cfg = config.0.clone();
    py.detach(move || rollout::run_rollout(&cfg, seed, record_trajectory)).map(PyRolloutRecord).map_err(to_py_err)
}

#[pyfunction]
fn run_group(py: Python<'_>, config: &PyExperimentConfig, group_index: usize) -> PyResult<PyGroupRecord> {
    let cfg = config.0.clone();
    py.detach(move || rollout::run_group(&cfg, group_index, false)).map(PyGroupRecord).map_err(to_py_err)
}

#[pyfunction]
fn run_experiment(py: Python<'_>, config: &PyExperimentConfig) -> PyResult<Vec<PyGroupRecord>> {
    let cfg = config.0.clone();
    let groups = py.detach(move || rollout::run_experiment(&cfg, false)).map_err(to_py_err)?;
    Ok(groups.into_iter().map(PyGroupRecord).collect())
}

/// Runs the full experiment and returns the certificate report as a dict.
#[pyfunction]
fn certify<'py>(py: Python<'py>, config: &PyExperimentConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.0.clone();
    let report = py
        .detach(move || {
            let groups = rollout::run_experiment(&cfg, false)?;
            CertificateReport::build(&cfg, &groups, cli::config_hash(&cfg))
        })
        .map_err(to_py_err)?;
    json_to_py(py, &report)
}

#[pyfunction]
fn empirical_mean(x_flags: Vec<bool>) -> PyResult<f64> {
    bounds::empirical_mean(&x_flags).map_err(to_py_err)
}

#[pyfunction]
fn pairwise_variance(x_flags: Vec<bool>) -> PyResult<f64> {
    bounds::pairwise_variance(&x_flags).map_err(to_py_err)
}

#[pyfunction]
fn bernstein_slack(sigma2_hat: f64, p: usize, delta: f64) -> PyResult<f64> {
    bounds::bernstein_slack(sigma2_hat, p, delta).map_err(to_py_err)
}

#[pyfunction]
fn bernstein_bound(p_hat: f64, sigma2_hat: f64, p: usize, delta: f64) -> PyResult<f64> {
    bounds::bernstein_bound(p_hat, sigma2_hat, p, delta).map_err(to_py_err)
}

#[pyfunction]
fn hoeffding_bound(p: usize, delta: f64) -> PyResult<f64> {
    bounds::hoeffding_bound(p, delta).map_err(to_py_err)
}

#[pyfunction]
fn scenario_bound(d_support: usize, p: usize, delta: f64) -> PyResult<f64> {
    bounds::scenario_bound(d_support, p, delta).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (z_scores, tol_support = 1e-12))]
fn count_support(z_scores: Vec<f64>, tol_support: f64) -> PyResult<usize> {
    bounds::count_support(&z_scores, tol_support).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (h_min, k_steps, sigma2_step, c_increment, n_pairs = 1))]
fn analytic_delta(h_min: f64, k_steps: usize, sigma2_step: f64, c_increment: f64, n_pairs: usize) -> PyResult<f64> {
    bounds::analytic_delta(&AnalyticBoundInputs { h_min, k_steps, sigma2_step, c_increment, n_pairs })
        .map_err(to_py_err)
}

#[pyfunction]
fn config_schema<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &cli::config_schema())
}

#[pymodule]
pub fn psicert_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyExperimentConfig>()?;
    m.add_class::<PySafetyParams>()?;
    m.add_class::<PyQpSolution>()?;
    m.add_class::<PyRolloutRecord>()?;
    m.add_class::<PyGroupRecord>()?;
    m.add_function(wrap_pyfunction!(h_pair, m)?)?;
    m.add_function(wrap_pyfunction!(grad_h_pair, m)?)?;
    m.add_function(wrap_pyfunction!(propagation_vector, m)?)?;
    m.add_function(wrap_pyfunction!(psi_safety, m)?)?;
    m.add_function(wrap_pyfunction!(disturbance_margin, m)?)?;
    m.add_function(wrap_pyfunction!(solve_qp, m)?)?;
    m.add_function(wrap_pyfunction!(run_rollout, m)?)?;
    m.add_function(wrap_pyfunction!(run_group, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_mean, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_variance, m)?)?;
    m.add_function(wrap_pyfunction!(bernstein_slack, m)?)?;
    m.add_function(wrap_pyfunction!(bernstein_bound, m)?)?;
    m.add_function(wrap_pyfunction!(hoeffding_bound, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_bound, m)?)?;
    m.add_function(wrap_pyfunction!(count_support, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_delta, m)?)?;
    m.add_function(wrap_pyfunction!(config_schema, m)?)?;
    Ok(())
}
