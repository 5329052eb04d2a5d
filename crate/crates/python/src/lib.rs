//! Python bindings: datasets, the penalized EM fit and the three interval
//! methods. Matrices cross the boundary as lists of rows.

use nalgebra::DMatrix;
use poolsel::simulation::{lambda_grid as reference_grid, simulate_dataset, DgpConfig};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: poolsel::Error) -> PyErr {
    match err {
        poolsel::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e if e.is_numerical() => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn info_method(name: &str) -> PyResult<poolsel::InfoMethod> {
    match name {
        "louis" => Ok(poolsel::InfoMethod::Louis),
        "sandwich" => Ok(poolsel::InfoMethod::Sandwich),
        other => Err(PyValueError::new_err(format!("info must be 'louis' or 'sandwich', got '{other}'"))),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("x must be a rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

/// Covariates, pool memberships and pooled test results with the assay accuracy.
#[pyclass(name = "Dataset", module = "poolsel", frozen)]
pub struct PyDataset {
    inner: poolsel::Dataset,
}

#[pymethods]
impl PyDataset {
    /// `pools` lists the 0-based individuals of each pool; omit it for individual testing.
    #[new]
    #[pyo3(signature = (x, z, se, sp, pools=None))]
    fn new(x: Vec<Vec<f64>>, z: Vec<bool>, se: f64, sp: f64, pools: Option<Vec<Vec<usize>>>) -> PyResult<Self> {
        let x = matrix(&x)?;
        let inner = match pools {
            Some(pools) => poolsel::Dataset::new(x, pools, z, se, sp),
            None => poolsel::Dataset::individual(x, z, se, sp),
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_csv(path: &str, se: f64, sp: f64) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let inner = poolsel::io::read_dataset(file, se, sp).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn num_pools(&self) -> usize {
        self.inner.num_pools()
    }

    #[getter]
    fn z(&self) -> Vec<bool> {
        self.inner.z().to_vec()
    }

    #[getter]
    fn pools(&self) -> Vec<Vec<usize>> {
        self.inner.pools().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={}, pools={})", self.inner.n(), self.inner.p(), self.inner.num_pools())
    }
}

/// A LASSO fit by EM at one penalty.
#[pyclass(name = "Fit", module = "poolsel", frozen)]
pub struct PyFit {
    inner: poolsel::PenalizedFit,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.theta_hat.alpha()
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.theta_hat.beta().to_vec()
    }

    /// 0-based selected covariates.
    #[getter]
    fn selected(&self) -> Vec<usize> {
        self.inner.selected()
    }

    #[getter]
    fn penalty(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    /// E[Y_i | Z] at the fitted coefficients.
    #[getter]
    fn y_hat(&self) -> Vec<f64> {
        self.inner.y_hat.clone()
    }

    /// `(aic, bic)` of the unpenalized refit on the selected support.
    fn information_criteria(&self, data: &PyDataset) -> PyResult<(f64, f64)> {
        let theta_bar = poolsel::post_selection_estimator(&self.inner, &data.inner).map_err(to_py)?;
        let ic = poolsel::aic_bic(&theta_bar, &data.inner);
        Ok((ic.aic, ic.bic))
    }

    fn __repr__(&self) -> String {
        format!("Fit(penalty={}, selected={:?}, converged={})", self.inner.lambda, self.inner.selected(), self.inner.converged)
    }
}

/// A confidence interval for one selected coefficient.
#[pyclass(name = "Interval", module = "poolsel", frozen, get_all)]
pub struct PyInterval {
    coefficient: Option<usize>,
    method: &'static str,
    point: f64,
    std_error: f64,
    lower: f64,
    upper: f64,
    level: f64,
    odds_lower: f64,
    odds_upper: f64,
    v_minus: Option<f64>,
    v_plus: Option<f64>,
    pivot_at_zero: Option<f64>,
    degenerate: bool,
}

#[pymethods]
impl PyInterval {
    #[getter]
    fn width(&self) -> f64 {
        self.upper - self.lower
    }

    fn __repr__(&self) -> String {
        format!(
            "Interval({} x{}: {:.4} in [{:.4}, {:.4}])",
            self.method,
            self.coefficient.map_or(0, |j| j + 1),
            self.point,
            self.lower,
            self.upper
        )
    }
}

impl From<poolsel::IntervalEstimate> for PyInterval {
    fn from(ci: poolsel::IntervalEstimate) -> Self {
        Self {
            coefficient: ci.coefficient,
            method: ci.method.as_str(),
            point: ci.point,
            std_error: ci.std_error,
            lower: ci.lower,
            upper: ci.upper,
            level: ci.level,
            odds_lower: ci.odds_lower,
            odds_upper: ci.odds_upper,
            v_minus: ci.v_minus,
            v_plus: ci.v_plus,
            pivot_at_zero: ci.pivot_at_zero,
            degenerate: ci.degenerate,
        }
    }
}

fn intervals(cis: Vec<poolsel::IntervalEstimate>) -> Vec<PyInterval> {
    cis.into_iter().map(PyInterval::from).collect()
}

#[pyfunction]
#[pyo3(signature = (data, penalty))]
fn em_fit(py: Python<'_>, data: &PyDataset, penalty: f64) -> PyResult<PyFit> {
    let inner = py.detach(|| poolsel::em_fit(&data.inner, penalty, None)).map_err(to_py)?;
    Ok(PyFit { inner })
}

/// Selective intervals conditional on the selected model and signs.
#[pyfunction]
#[pyo3(signature = (data, fit, level=0.95, info="louis"))]
fn selective_intervals(py: Python<'_>, data: &PyDataset, fit: &PyFit, level: f64, info: &str) -> PyResult<Vec<PyInterval>> {
    let method = info_method(info)?;
    py.detach(|| {
        let est = poolsel::post_selection(&fit.inner, &data.inner, method)?;
        poolsel::selective_intervals(&est, level)
    })
    .map(intervals)
    .map_err(to_py)
}

/// Wald intervals that ignore selection.
#[pyfunction]
#[pyo3(signature = (data, fit, level=0.95))]
fn naive_intervals(py: Python<'_>, data: &PyDataset, fit: &PyFit, level: f64) -> PyResult<Vec<PyInterval>> {
    py.detach(|| poolsel::naive_ci(&fit.inner, &data.inner, level)).map(intervals).map_err(to_py)
}

/// Selection on half of the pools and Wald intervals on the other half.
#[pyfunction]
#[pyo3(signature = (data, penalty, level=0.95, seed=0))]
fn split_intervals(py: Python<'_>, data: &PyDataset, penalty: f64, level: f64, seed: u64) -> PyResult<Vec<PyInterval>> {
    py.detach(|| poolsel::split_inference(&data.inner, penalty, level, seed))
        .map(|s| intervals(s.intervals))
        .map_err(to_py)
}

/// Draws a dataset from the logistic design; returns `(dataset, y_true)`.
#[pyfunction]
#[pyo3(signature = (n=1000, pool_size=1, se=0.95, sp=0.97, seed=0, theta=None))]
fn simulate(
    n: usize,
    pool_size: usize,
    se: f64,
    sp: f64,
    seed: u64,
    theta: Option<Vec<f64>>,
) -> PyResult<(PyDataset, Vec<bool>)> {
    let mut cfg = DgpConfig { n, pool_size, se, sp, seed, ..DgpConfig::default() };
    if let Some(theta) = theta {
        let (&alpha, beta) = theta.split_first().ok_or_else(|| PyValueError::new_err("theta needs an intercept"))?;
        cfg.p = beta.len();
        cfg.theta_true = poolsel::Coefficients::new(alpha, beta.to_vec()).map_err(to_py)?;
    }
    let sim = simulate_dataset(&cfg).map_err(to_py)?;
    Ok((PyDataset { inner: sim.dataset }, sim.y_true))
}

/// The 25-point reference penalty grid for n = 1000 or 2000.
#[pyfunction]
fn lambda_grid(n: usize) -> PyResult<Vec<f64>> {
    reference_grid(n).map_err(to_py)
}

/// CDF at `x` of N(mu, sigma2) truncated to [a, b].
#[pyfunction]
fn truncated_normal_cdf(x: f64, mu: f64, sigma2: f64, a: f64, b: f64) -> PyResult<f64> {
    poolsel::TruncatedGaussian::new(mu, sigma2, a, b).and_then(|t| t.cdf(x)).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "poolsel")]
fn poolsel_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_class::<PyInterval>()?;
    m.add_function(wrap_pyfunction!(em_fit, m)?)?;
    m.add_function(wrap_pyfunction!(selective_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(naive_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(split_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_grid, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_normal_cdf, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
