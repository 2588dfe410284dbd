//! Python bindings. Vectors are lists of floats, matrices lists of rows.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use anchored_inversion::engine::{self, Posterior, Scenario, ScenarioConfig};
use anchored_inversion::mixture;
use anchored_inversion::mvn;
use anchored_inversion::rng::stream;
use anchored_inversion::transform;
use anchored_inversion::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Numerical(_) | Error::TooManyForwardFailures { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("matrix rows differ in length"));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[pyfunction]
fn exp_correlation(x1: f64, x2: f64, range: f64) -> f64 {
    anchored_inversion::field::exp_correlation(x1, x2, range)
}

/// Tridiagonal steady-state solve for a conductivity profile `y`.
#[pyfunction]
fn solve_process(y: Vec<f64>, source: Vec<f64>, left: f64, right: f64) -> PyResult<Vec<f64>> {
    anchored_inversion::forward::solve_process(&y, &source, left, right).map_err(py_err)
}

#[pyfunction]
fn effective_sample_size(weights: Vec<f64>) -> f64 {
    mixture::effective_sample_size(&weights)
}

#[pyclass(frozen)]
struct Transform(transform::Transform);

#[pymethods]
impl Transform {
    #[staticmethod]
    fn identity() -> Self {
        Self(transform::Transform::Identity)
    }

    #[staticmethod]
    fn log() -> Self {
        Self(transform::Transform::Log)
    }

    #[staticmethod]
    fn logit(lower: f64, upper: f64) -> PyResult<Self> {
        transform::Transform::logit(lower, upper).map(Self).map_err(py_err)
    }

    fn apply(&self, x: f64) -> PyResult<f64> {
        self.0.apply(x).map_err(py_err)
    }

    fn invert(&self, u: f64) -> f64 {
        self.0.invert(u)
    }

    fn __repr__(&self) -> String {
        format!("Transform({})", self.0)
    }
}

#[pyclass(frozen)]
struct MvnDist(mvn::MvnDist);

#[pymethods]
impl MvnDist {
    #[new]
    fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> PyResult<Self> {
        mvn::MvnDist::new(DVector::from_vec(mean), matrix(cov)?).map(Self).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.0.mean().iter().copied().collect()
    }

    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        rows(self.0.cov())
    }

    fn log_density(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.log_density(&DVector::from_vec(x)).map_err(py_err)
    }

    fn sample(&self, count: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        self.0.sample(count, &mut stream(seed)).map(|m| rows(&m)).map_err(py_err)
    }

    /// Law given `h x = obs`.
    fn condition_on_linear(&self, h: Vec<Vec<f64>>, obs: Vec<f64>) -> PyResult<Self> {
        self.0
            .condition_on_linear(&matrix(h)?, &DVector::from_vec(obs))
            .map(Self)
            .map_err(py_err)
    }
}

#[pyclass(frozen)]
struct NormalMixture(mixture::NormalMixture);

#[pymethods]
impl NormalMixture {
    /// Reads the text format written by `to_text` or the `invert` command.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| py_err(e.into()))?;
        Self::from_text(&text)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        mixture::NormalMixture::from_text(text).map(Self).map_err(py_err)
    }

    /// Kernel density mixture of equally weighted points, `k` neighbors and
    /// bandwidth `h`.
    #[staticmethod]
    #[pyo3(signature = (points, split, k, h = 1.0))]
    fn from_sample(points: Vec<Vec<f64>>, split: usize, k: usize, h: f64) -> PyResult<Self> {
        let sample = mixture::WeightedJointSample::uniform(matrix(points)?, split).map_err(py_err)?;
        mixture::build_kde(&sample, k, h).map(Self).map_err(py_err)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights()
    }

    fn mean(&self) -> Vec<f64> {
        self.0.mean().iter().copied().collect()
    }

    fn covariance(&self) -> Vec<Vec<f64>> {
        rows(&self.0.covariance())
    }

    fn effective_sample_size(&self) -> f64 {
        self.0.effective_sample_size()
    }

    /// Mixture of the leading `split` coordinates given the rest equal `observed`.
    fn condition(&self, split: usize, observed: Vec<f64>) -> PyResult<Self> {
        self.0.condition(split, &DVector::from_vec(observed)).map(Self).map_err(py_err)
    }

    fn log_density(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.log_density(&DVector::from_vec(x)).map_err(py_err)
    }

    fn marginal_density(&self, coords: Vec<usize>, points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let points: Vec<DVector<f64>> = points.into_iter().map(DVector::from_vec).collect();
        self.0.marginal_density(&coords, &points).map_err(py_err)
    }

    fn sample(&self, count: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        self.0.sample(count, &mut stream(seed)).map(|m| rows(&m)).map_err(py_err)
    }
}

/// Summary of an inversion run.
#[pyclass(frozen, get_all)]
struct RunSummary {
    parameter_names: Vec<String>,
    sample_size: usize,
    neighbors: usize,
    bandwidth: f64,
    ess: f64,
    forward_failures: usize,
    /// `None` for a type-A-only scenario.
    posterior: Option<Py<NormalMixture>>,
}

/// Runs the scenario in a TOML config; relative data paths resolve against
/// the config's directory. Writes the run files when `out` is given.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn run_inversion(py: Python<'_>, config: PathBuf, out: Option<PathBuf>) -> PyResult<RunSummary> {
    let artifacts = py
        .detach(|| -> anchored_inversion::Result<_> {
            let cfg = ScenarioConfig::load(&config)?;
            let scenario = Scenario::from_config(&cfg, config.parent().unwrap_or(Path::new(".")))?;
            let artifacts = engine::with_workers(cfg.workers, || engine::run_inversion(&scenario))??;
            if let Some(dir) = &out {
                artifacts.write(dir)?;
            }
            Ok(artifacts)
        })
        .map_err(py_err)?;
    let posterior = match artifacts.posterior {
        Posterior::Mixture(m) => Some(Py::new(py, NormalMixture(m))?),
        Posterior::TypeA => None,
    };
    Ok(RunSummary {
        parameter_names: artifacts.layout.names(),
        sample_size: artifacts.sample_size,
        neighbors: artifacts.neighbors,
        bandwidth: artifacts.bandwidth,
        ess: artifacts.ess,
        forward_failures: artifacts.forward_failures,
        posterior,
    })
}

#[pymodule]
fn anchored(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(exp_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(solve_process, m)?)?;
    m.add_function(wrap_pyfunction!(effective_sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(run_inversion, m)?)?;
    m.add_class::<Transform>()?;
    m.add_class::<MvnDist>()?;
    m.add_class::<NormalMixture>()?;
    m.add_class::<RunSummary>()?;
    Ok(())
}
