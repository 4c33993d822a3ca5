//! Python bindings. Vectors are `list[float]`, matrices are row-major
//! `list[list[float]]`.

use std::path::PathBuf;

use mdes_core::baselines::{lasso_solve, ridge_solve};
use mdes_core::engine::{
    kernel_step_limit, run_eg_pm as core_run_eg_pm, run_kernel as core_run_kernel,
};
use mdes_core::offset::{offset_complexity_mc, ClassSpec};
use mdes_core::problem::rbf_gram as core_rbf_gram;
use mdes_core::{
    AnyMap, EuclideanMap, GaussianLinearLaw, HypentropyMap, MirrorMap, QuadraticMap,
    RegressionProblem, RunOptions, StopReason,
};
use mdes_experiments::{ExperimentConfig, ExperimentKind, Overrides};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn list(v: &DVector<f64>) -> Vec<f64> {
    v.as_slice().to_vec()
}

/// Least-squares problem with design `Z` (n × m) and labels `y`.
#[pyclass(module = "mdes", name = "Problem", frozen)]
struct PyProblem(RegressionProblem);

#[pymethods]
impl PyProblem {
    #[new]
    fn new(design: Vec<Vec<f64>>, labels: Vec<f64>) -> PyResult<Self> {
        RegressionProblem::new(matrix(design)?, vector(labels))
            .map(PyProblem)
            .map_err(value_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn design(&self) -> Vec<Vec<f64>> {
        rows(self.0.design())
    }

    #[getter]
    fn labels(&self) -> Vec<f64> {
        list(self.0.labels())
    }

    fn empirical_risk(&self, alpha: Vec<f64>) -> PyResult<f64> {
        self.0.empirical_risk(&vector(alpha)).map_err(value_err)
    }

    fn risk_gradient(&self, alpha: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0
            .risk_gradient(&vector(alpha))
            .map(|g| list(&g))
            .map_err(value_err)
    }

    fn empirical_distance_sq(&self, alpha: Vec<f64>, other: Vec<f64>) -> PyResult<f64> {
        self.0
            .empirical_distance_sq(&vector(alpha), &vector(other))
            .map_err(value_err)
    }

    /// Both sides of `⟨−∇R_n(α), α′ − α⟩ = R_n(α) − R_n(α′) + ‖Z(α − α′)‖²/n`.
    fn missing_term_sides(&self, alpha: Vec<f64>, reference: Vec<f64>) -> PyResult<(f64, f64)> {
        self.0
            .missing_term_sides(&vector(alpha), &vector(reference))
            .map_err(value_err)
    }

    fn smoothness_l2(&self) -> PyResult<f64> {
        self.0.smoothness_l2().map_err(value_err)
    }

    fn column_bound(&self) -> f64 {
        self.0.column_bound()
    }

    fn least_squares(&self) -> PyResult<Vec<f64>> {
        self.0.least_squares().map(|a| list(&a)).map_err(value_err)
    }

    fn ridge(&self, lam: f64) -> PyResult<Vec<f64>> {
        ridge_solve(&self.0, lam)
            .map(|a| list(&a))
            .map_err(value_err)
    }

    #[pyo3(signature = (lam, tol = 1e-9))]
    fn lasso(&self, lam: f64, tol: f64) -> PyResult<Vec<f64>> {
        lasso_solve(&self.0, lam, tol)
            .map(|a| list(&a))
            .map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Problem(n={}, m={})", self.0.n(), self.0.m())
    }
}

/// Gaussian design `x ~ N(0, Σ)` with `y = ⟨α*, x⟩ + N(0, σ²)`.
#[pyclass(module = "mdes", name = "GaussianLaw", frozen)]
struct PyLaw(GaussianLinearLaw);

#[pymethods]
impl PyLaw {
    #[new]
    fn new(covariance: Vec<Vec<f64>>, true_param: Vec<f64>, noise_sd: f64) -> PyResult<Self> {
        GaussianLinearLaw::new(matrix(covariance)?, vector(true_param), noise_sd)
            .map(PyLaw)
            .map_err(value_err)
    }

    #[staticmethod]
    fn isotropic_sparse(d: usize, s: usize, noise_sd: f64) -> PyResult<Self> {
        GaussianLinearLaw::isotropic_sparse(d, s, noise_sd)
            .map(PyLaw)
            .map_err(value_err)
    }

    #[staticmethod]
    fn correlated_2d() -> Self {
        PyLaw(GaussianLinearLaw::correlated_2d())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn true_param(&self) -> Vec<f64> {
        list(self.0.true_param())
    }

    #[getter]
    fn noise_sd(&self) -> f64 {
        self.0.noise_sd()
    }

    fn sample(&self, n: usize, seed: u64) -> PyResult<PyProblem> {
        self.0
            .sample_problem(n, seed)
            .map(PyProblem)
            .map_err(value_err)
    }

    fn population_risk(&self, alpha: Vec<f64>) -> PyResult<f64> {
        self.0.population_risk(&vector(alpha)).map_err(value_err)
    }
}

#[pyclass(module = "mdes", name = "MirrorMap", frozen)]
struct PyMap(AnyMap);

#[pymethods]
impl PyMap {
    #[staticmethod]
    fn euclidean() -> Self {
        PyMap(EuclideanMap.into())
    }

    #[staticmethod]
    fn hypentropy(gamma: f64) -> PyResult<Self> {
        HypentropyMap::new(gamma)
            .map(|m| PyMap(m.into()))
            .map_err(value_err)
    }

    /// `ψ(α) = scale · αᵀQα`.
    #[staticmethod]
    #[pyo3(signature = (q, scale = 0.5))]
    fn quadratic(q: Vec<Vec<f64>>, scale: f64) -> PyResult<Self> {
        QuadraticMap::new(matrix(q)?, scale)
            .map(|m| PyMap(m.into()))
            .map_err(value_err)
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn value(&self, alpha: Vec<f64>) -> PyResult<f64> {
        self.0.value(&vector(alpha)).map_err(value_err)
    }

    fn dual(&self, alpha: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0
            .dual(&vector(alpha))
            .map(|v| list(&v))
            .map_err(value_err)
    }

    fn dual_inverse(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0
            .dual_inverse(&vector(theta))
            .map(|v| list(&v))
            .map_err(value_err)
    }

    /// `D_ψ(reference, alpha)`.
    fn bregman(&self, reference: Vec<f64>, alpha: Vec<f64>) -> PyResult<f64> {
        self.0
            .bregman(&vector(reference), &vector(alpha))
            .map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("MirrorMap({})", self.0.name())
    }
}

#[pyclass(module = "mdes", name = "Record", frozen, get_all)]
struct PyRecord {
    t: f64,
    step: usize,
    risk: f64,
    delta: f64,
    r: f64,
    potential: f64,
    alpha: Option<Vec<f64>>,
}

#[pymethods]
impl PyRecord {
    fn residual(&self) -> f64 {
        self.delta + self.r
    }
}

#[pyclass(module = "mdes", name = "StoppingReport", frozen, get_all)]
struct PyReport {
    t_star: f64,
    step_star: usize,
    epsilon: f64,
    budget_t: f64,
    residual: f64,
    /// "threshold" or "budget_exhausted".
    stopped_by: &'static str,
    grid_step: Option<f64>,
}

#[pymethods]
impl PyReport {
    fn __repr__(&self) -> String {
        format!(
            "StoppingReport(t_star={}, residual={}, epsilon={}, budget_t={}, stopped_by={})",
            self.t_star, self.residual, self.epsilon, self.budget_t, self.stopped_by
        )
    }
}

type RunResult = (Vec<PyRecord>, PyReport);
type CheckRows = Vec<(String, bool, String)>;

fn convert(
    out: mdes_core::Result<(mdes_core::Trajectory, mdes_core::StoppingReport)>,
) -> PyResult<RunResult> {
    let (traj, rep) = out.map_err(value_err)?;
    let records = traj
        .records
        .into_iter()
        .map(|r| PyRecord {
            t: r.t,
            step: r.step,
            risk: r.risk,
            delta: r.delta,
            r: r.r,
            potential: r.potential,
            alpha: r.alpha,
        })
        .collect();
    let report = PyReport {
        t_star: rep.t_star,
        step_star: rep.step_star,
        epsilon: rep.epsilon,
        budget_t: rep.budget_t,
        residual: rep.residual,
        stopped_by: match rep.stopped_by {
            StopReason::Threshold => "threshold",
            StopReason::BudgetExhausted => "budget_exhausted",
        },
        grid_step: rep.grid_step,
    };
    Ok((records, report))
}

fn options(
    max_iters: Option<usize>,
    record_every: usize,
    store_alpha: bool,
    stop_at_threshold: bool,
) -> RunOptions {
    RunOptions {
        max_iters,
        record_every: record_every.max(1),
        store_alpha,
        stop_at_threshold,
        ..Default::default()
    }
}

/// Discrete mirror descent stopped at the first `t` with `δ_t + r_t ≤ ε`.
/// Returns `(records, report)`.
#[pyfunction]
#[pyo3(signature = (map, problem, init, eta, epsilon, reference, *, max_iters = None, record_every = 1, store_alpha = false, stop_at_threshold = true))]
#[allow(clippy::too_many_arguments)]
fn run_discrete(
    py: Python<'_>,
    map: &PyMap,
    problem: &PyProblem,
    init: Vec<f64>,
    eta: f64,
    epsilon: f64,
    reference: Vec<f64>,
    max_iters: Option<usize>,
    record_every: usize,
    store_alpha: bool,
    stop_at_threshold: bool,
) -> PyResult<RunResult> {
    let opts = options(max_iters, record_every, store_alpha, stop_at_threshold);
    let (init, reference) = (vector(init), vector(reference));
    convert(py.detach(|| {
        mdes_core::run_discrete(&map.0, &problem.0, &init, eta, epsilon, &reference, &opts)
    }))
}

/// Mirror flow integrated with RK4 on a grid of step `h`.
#[pyfunction]
#[pyo3(signature = (map, problem, init, epsilon, reference, *, horizon = None, h = None, record_every = 1, store_alpha = false, stop_at_threshold = true))]
#[allow(clippy::too_many_arguments)]
fn run_continuous(
    py: Python<'_>,
    map: &PyMap,
    problem: &PyProblem,
    init: Vec<f64>,
    epsilon: f64,
    reference: Vec<f64>,
    horizon: Option<f64>,
    h: Option<f64>,
    record_every: usize,
    store_alpha: bool,
    stop_at_threshold: bool,
) -> PyResult<RunResult> {
    let opts = options(None, record_every, store_alpha, stop_at_threshold);
    let (init, reference) = (vector(init), vector(reference));
    convert(py.detach(|| {
        mdes_core::run_continuous(
            &map.0, &problem.0, &init, epsilon, &reference, horizon, h, &opts,
        )
    }))
}

/// EG± from zero; identical to hypentropy mirror descent with the same `γ`.
#[pyfunction]
#[pyo3(signature = (problem, gamma, eta, epsilon, reference, *, max_iters = None, record_every = 1, store_alpha = false, stop_at_threshold = true))]
#[allow(clippy::too_many_arguments)]
fn run_eg_pm(
    py: Python<'_>,
    problem: &PyProblem,
    gamma: f64,
    eta: f64,
    epsilon: f64,
    reference: Vec<f64>,
    max_iters: Option<usize>,
    record_every: usize,
    store_alpha: bool,
    stop_at_threshold: bool,
) -> PyResult<RunResult> {
    let opts = options(max_iters, record_every, store_alpha, stop_at_threshold);
    let reference = vector(reference);
    convert(py.detach(|| core_run_eg_pm(&problem.0, gamma, eta, epsilon, &reference, &opts)))
}

/// Kernel gradient descent on coefficients `β` for the Gram matrix `gram`.
/// `eta = None` uses the largest admissible step `min(1, 1/λ_max(K/n))`.
#[pyfunction]
#[pyo3(signature = (gram, labels, epsilon, reference, *, eta = None, kernel_bound = 1.0, max_iters = None, record_every = 1, store_alpha = false))]
#[allow(clippy::too_many_arguments)]
fn run_kernel(
    py: Python<'_>,
    gram: Vec<Vec<f64>>,
    labels: Vec<f64>,
    epsilon: f64,
    reference: Vec<f64>,
    eta: Option<f64>,
    kernel_bound: f64,
    max_iters: Option<usize>,
    record_every: usize,
    store_alpha: bool,
) -> PyResult<RunResult> {
    let kp = mdes_core::KernelProblem::new(matrix(gram)?, vector(labels), kernel_bound)
        .map_err(value_err)?;
    let eta = eta.unwrap_or_else(|| kernel_step_limit(&kp));
    let opts = options(max_iters, record_every, store_alpha, true);
    let (init, reference) = (DVector::zeros(kp.n()), vector(reference));
    convert(py.detach(|| core_run_kernel(&kp, &init, eta, epsilon, &reference, &opts, false)))
}

/// RBF Gram matrix `exp(−‖x_i − x_j‖² / (2 bandwidth²))` of the rows of `points`.
#[pyfunction]
fn rbf_gram(points: Vec<Vec<f64>>, bandwidth: f64) -> PyResult<Vec<Vec<f64>>> {
    core_rbf_gram(&matrix(points)?, bandwidth)
        .map(|k| rows(&k))
        .map_err(value_err)
}

/// Sparse-regression tuning `(γ, η, ε)` plus the stopping budget, error bound and ball radius.
#[pyfunction]
fn l1_hyperparameters(
    kappa: f64,
    l1_norm: f64,
    sigma: f64,
    d: usize,
    n: usize,
) -> PyResult<Vec<(&'static str, f64)>> {
    let hp = mdes_core::l1_hyperparameters(kappa, l1_norm, sigma, d, n).map_err(value_err)?;
    Ok(vec![
        ("gamma", hp.gamma),
        ("eta", hp.eta),
        ("epsilon", hp.epsilon),
        ("t_star_budget", hp.t_star_budget),
        ("error_bound", hp.error_bound),
        ("ball_radius", hp.ball_radius),
    ])
}

/// Monte Carlo offset Rademacher complexity of the ℓ₂ ball of `radius` on
/// `design`. Returns `(mean, standard_error)`.
#[pyfunction]
#[pyo3(signature = (design, radius, c, draws = 1000, seed = 0))]
fn offset_complexity_l2(
    design: Vec<Vec<f64>>,
    radius: f64,
    c: f64,
    draws: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let est = offset_complexity_mc(
        &matrix(design)?,
        &ClassSpec::L2Ball { radius },
        c,
        draws,
        seed,
    )
    .map_err(value_err)?;
    Ok((est.mean, est.std_error))
}

/// Runs a named experiment into `out_dir`. Returns `(passed, [(check, passed, detail)])`.
#[pyfunction]
#[pyo3(signature = (name, out_dir, *, config = None, seeds = None, base_seed = None, jobs = None))]
fn run_experiment(
    py: Python<'_>,
    name: &str,
    out_dir: PathBuf,
    config: Option<PathBuf>,
    seeds: Option<usize>,
    base_seed: Option<u64>,
    jobs: Option<usize>,
) -> PyResult<(bool, CheckRows)> {
    let kind: ExperimentKind = name.parse().map_err(value_err)?;
    let cfg = match config {
        Some(path) => ExperimentConfig::from_path(&path).map_err(value_err)?,
        None => ExperimentConfig::default(),
    };
    let ov = Overrides {
        seeds,
        base_seed,
        jobs,
    };
    let verdict = py
        .detach(|| mdes_experiments::run_by_kind(kind, &cfg, &ov, &out_dir))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((
        verdict.passed,
        verdict
            .checks
            .into_iter()
            .map(|c| (c.name, c.passed, c.detail))
            .collect(),
    ))
}

#[pymodule]
fn mdes(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", mdes_core::VERSION)?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyLaw>()?;
    m.add_class::<PyMap>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(run_discrete, m)?)?;
    m.add_function(wrap_pyfunction!(run_continuous, m)?)?;
    m.add_function(wrap_pyfunction!(run_eg_pm, m)?)?;
    m.add_function(wrap_pyfunction!(run_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(rbf_gram, m)?)?;
    m.add_function(wrap_pyfunction!(l1_hyperparameters, m)?)?;
    m.add_function(wrap_pyfunction!(offset_complexity_l2, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
