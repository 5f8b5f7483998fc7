//! Python bindings: models, simulation, moments, estimation and inference.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

use arhmc::covariance::{covariance_report_masked, CovarianceMethod, DEFAULT_R1, DEFAULT_R2, GAUSSIAN_MU4};
use arhmc::estimate::{estimate as estimate_series, SolverMethod, SolverOptions};
use arhmc::model::{model_to_theta, theta_to_model, validate, RegimeModel, ThetaVector, DEFAULT_BETAS};
use arhmc::moments::{default_n_lags, empirical_moments as sample_moments, jacobian_psi, model_autocovs};
use arhmc::simulate::{preprocess_series, simulate_arhmc, NoiseSpec, DEFAULT_BURNIN};
use arhmc::workflow::{fit_series, FitOptions};
use arhmc::ArhmcError;

fn to_py_err(e: ArhmcError) -> PyErr {
    match e {
        ArhmcError::Structural(_) | ArhmcError::Domain(_) => PyValueError::new_err(e.to_string()),
        ArhmcError::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        ArhmcError::Io(_) => PyIOError::new_err(e.to_string()),
    }
}

/// Converts any serializable report into plain Python dicts and lists.
fn to_python<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// A `K`-regime model with its flat parameter vector.
#[pyclass(name = "RegimeModel", module = "weak_arhmc", frozen)]
struct PyRegimeModel {
    theta: ThetaVector,
    model: RegimeModel,
}

impl PyRegimeModel {
    fn from_theta(theta: ThetaVector) -> PyResult<Self> {
        let model = theta_to_model(&theta).map_err(to_py_err)?;
        Ok(Self { theta, model })
    }
}

#[pymethods]
impl PyRegimeModel {
    /// Builds the model from the flat layout `[a | free rows of P | f]`.
    #[new]
    fn new(k: usize, theta: Vec<f64>) -> PyResult<Self> {
        Self::from_theta(ThetaVector::new(k, theta).map_err(to_py_err)?)
    }

    /// Builds the model from AR coefficients, a transition matrix and amplitudes.
    #[staticmethod]
    fn from_parts(a: Vec<f64>, p: Vec<Vec<f64>>, f: Vec<f64>) -> PyResult<Self> {
        let k = a.len();
        if p.len() != k || p.iter().any(|r| r.len() != k) {
            return Err(PyValueError::new_err("transition matrix must be K x K"));
        }
        let model = RegimeModel {
            k,
            a: nalgebra::DVector::from_vec(a),
            p: nalgebra::DMatrix::from_fn(k, k, |i, j| p[i][j]),
            f: nalgebra::DVector::from_vec(f),
        };
        if (0..k).any(|i| (model.p.row(i).sum() - 1.0).abs() > 1e-12) {
            return Err(PyValueError::new_err("rows of the transition matrix must sum to 1"));
        }
        Self::from_theta(model_to_theta(&model))
    }

    #[getter]
    fn k(&self) -> usize {
        self.theta.k
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.theta.values.clone()
    }

    #[getter]
    fn a(&self) -> Vec<f64> {
        self.model.a.iter().copied().collect()
    }

    #[getter]
    fn p(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.model.p)
    }

    #[getter]
    fn f(&self) -> Vec<f64> {
        self.model.f.iter().copied().collect()
    }

    fn coordinate_names(&self) -> Vec<String> {
        ThetaVector::coordinate_names(self.theta.k)
    }

    fn stationary_distribution(&self) -> PyResult<Vec<f64>> {
        Ok(self.model.stationary_distribution().map_err(to_py_err)?.iter().copied().collect())
    }

    /// Stationarity and irreducibility diagnostics.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &validate(&self.theta, &DEFAULT_BETAS))
    }

    /// Theoretical autocovariances at lags `0..=n_lags`.
    fn autocovariances(&self, n_lags: usize) -> PyResult<Vec<f64>> {
        model_autocovs(&self.model, n_lags).map_err(to_py_err)
    }

    /// Jacobian of the lag `1..=n_lags` autocovariances, one row per lag.
    fn jacobian(&self, n_lags: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_rows(&jacobian_psi(&self.theta, n_lags).map_err(to_py_err)?))
    }

    /// Simulates `n` observations; returns a dict with `x` and, when
    /// requested, the 0-based `states` and the noise `eta`.
    #[pyo3(signature = (n, noise = "strong", seed = 0, burnin = DEFAULT_BURNIN, keep_latent = false))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        n: usize,
        noise: &str,
        seed: u64,
        burnin: usize,
        keep_latent: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let spec = NoiseSpec::parse(noise).map_err(to_py_err)?;
        let path = simulate_arhmc(&self.model, &spec, n, burnin, seed, keep_latent).map_err(to_py_err)?;
        to_python(py, &path)
    }

    fn __repr__(&self) -> String {
        format!("RegimeModel(k={}, theta={:?})", self.theta.k, self.theta.values)
    }
}

/// Sample autocovariances at lags `1..=n_lags`.
#[pyfunction]
fn empirical_moments(x: Vec<f64>, n_lags: usize) -> PyResult<Vec<f64>> {
    sample_moments(&x, n_lags).map_err(to_py_err)
}

/// Optional differencing followed by optional demeaning.
#[pyfunction]
#[pyo3(signature = (x, difference = false, demean = true))]
fn preprocess(x: Vec<f64>, difference: bool, demean: bool) -> PyResult<Vec<f64>> {
    preprocess_series(&x, difference, demean).map_err(to_py_err)
}

fn solver_options(k: usize, method: &str, tol: f64, starts: usize, seed: u64, mask: Option<&str>) -> PyResult<SolverOptions> {
    let mut opts = SolverOptions {
        method: method.parse::<SolverMethod>().map_err(to_py_err)?,
        tol,
        n_starts: starts,
        seed,
        ..SolverOptions::default()
    };
    if let Some(m) = mask {
        opts.mask = SolverOptions::parse_mask(k, m).map_err(to_py_err)?;
    }
    opts.validate().map_err(to_py_err)?;
    Ok(opts)
}

/// Multi-start moment estimation of a `k`-regime model.
#[pyfunction]
#[pyo3(signature = (x, k, n_lags = None, method = "broyden", tol = 1e-8, starts = 8, seed = 0, mask = None))]
#[allow(clippy::too_many_arguments)]
fn estimate<'py>(
    py: Python<'py>,
    x: Vec<f64>,
    k: usize,
    n_lags: Option<usize>,
    method: &str,
    tol: f64,
    starts: usize,
    seed: u64,
    mask: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = solver_options(k, method, tol, starts, seed, mask)?;
    let n_lags = n_lags.unwrap_or_else(|| default_n_lags(k));
    let result = py.detach(|| estimate_series(&x, k, n_lags, &opts)).map_err(to_py_err)?;
    to_python(py, &result)
}

/// Sandwich covariance report at `model`; `fixed` lists coordinates held
/// at known values.
#[pyfunction]
#[pyo3(signature = (x, model, n_lags = None, method = "spectral", r = None, r1 = DEFAULT_R1, r2 = DEFAULT_R2, mu4 = GAUSSIAN_MU4, fixed = None))]
#[allow(clippy::too_many_arguments)]
fn covariance<'py>(
    py: Python<'py>,
    x: Vec<f64>,
    model: &PyRegimeModel,
    n_lags: Option<usize>,
    method: &str,
    r: Option<usize>,
    r1: usize,
    r2: usize,
    mu4: f64,
    fixed: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyAny>> {
    let method = match method {
        "spectral" => CovarianceMethod::Spectral { r },
        "strong" => CovarianceMethod::Strong { r1, r2, mu4 },
        other => return Err(PyValueError::new_err(format!("unknown covariance method `{other}`"))),
    };
    let n_lags = n_lags.unwrap_or_else(|| default_n_lags(model.theta.k));
    let fixed = fixed.unwrap_or_default();
    let theta = model.theta.clone();
    let report = py.detach(|| covariance_report_masked(&x, &theta, n_lags, &method, &fixed)).map_err(to_py_err)?;
    to_python(py, &report)
}

/// Preprocessing, estimation, diagnostics and inference in one report.
#[pyfunction]
#[pyo3(signature = (x, k, difference = false, demean = true, mask = None, n_lags = None, method = "broyden", starts = 8, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn fit<'py>(
    py: Python<'py>,
    x: Vec<f64>,
    k: usize,
    difference: bool,
    demean: bool,
    mask: Option<&str>,
    n_lags: Option<usize>,
    method: &str,
    starts: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = FitOptions {
        difference,
        demean,
        n_lags,
        solver: solver_options(k, method, 1e-8, starts, seed, mask)?,
        covariance: CovarianceMethod::Spectral { r: None },
    };
    let report = py.detach(|| fit_series(&x, k, &opts)).map_err(to_py_err)?;
    to_python(py, &report)
}

#[pymodule]
fn weak_arhmc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRegimeModel>()?;
    m.add_function(wrap_pyfunction!(empirical_moments, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(covariance, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    Ok(())
}
