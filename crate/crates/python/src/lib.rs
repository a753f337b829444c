//! Python bindings: run configs, the end-to-end solve, saved solutions,
//! point clouds, the characteristics oracle and chamfer comparison.
//! Structured results (manifests, catalog entries, reports) cross over as
//! plain dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use lsrann_core::config::RunConfig;
use lsrann_core::run;
use lsrann_core::solver;
use lsrann_core::zeroset;
use lsrann_core::Error;

create_exception!(lsrann, ConfigError, PyValueError, "Invalid run configuration.");
create_exception!(lsrann, NumericalError, PyRuntimeError, "The numerical procedure failed.");
create_exception!(lsrann, LsrannError, PyRuntimeError, "Input/output or data error.");

fn to_py(e: Error) -> PyErr {
    match &e {
        Error::Config(_) | Error::UnknownCase { .. } | Error::TomlDe(_) => ConfigError::new_err(e.to_string()),
        e if e.is_numerical() => NumericalError::new_err(e.to_string()),
        _ => LsrannError::new_err(e.to_string()),
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| to_py(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Run configuration: a catalog case plus TOML overrides.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (case, seed = 1))]
    fn new(case: &str, seed: u64) -> Self {
        let mut inner = RunConfig::for_case(case);
        inner.seed = seed;
        Self { inner }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::from_toml(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(&path).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    /// The config with every field filled in from the catalog.
    fn resolved(&self) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.resolve().map_err(to_py)?.echo,
        })
    }

    #[getter]
    fn case(&self) -> String {
        self.inner.case.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(case={:?}, seed={})", self.inner.case, self.inner.seed)
    }
}

/// Zero-set or oracle point cloud with named coordinates.
#[pyclass(name = "PointCloud", from_py_object)]
#[derive(Clone)]
struct PyPointCloud {
    inner: zeroset::PointCloud,
}

#[pymethods]
impl PyPointCloud {
    #[new]
    #[pyo3(signature = (names, points, values = None))]
    fn new(names: Vec<String>, points: Vec<Vec<f64>>, values: Option<Vec<f64>>) -> PyResult<Self> {
        let values = values.unwrap_or_else(|| vec![0.0; points.len()]);
        Ok(Self {
            inner: zeroset::PointCloud::new(names, points, values).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: zeroset::PointCloud::read_csv(&path).map_err(to_py)?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(&path).map_err(to_py)
    }

    fn to_csv(&self) -> PyResult<String> {
        let bytes = self.inner.to_csv_bytes().map_err(to_py)?;
        String::from_utf8(bytes).map_err(|e| LsrannError::new_err(e.to_string()))
    }

    /// Points with `|coordinate[dim] − value| ≤ delta`, that coordinate dropped.
    #[pyo3(signature = (value, dim = 0, delta = 1e-9))]
    fn slice(&self, value: f64, dim: usize, delta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.slice(dim, value, delta).map_err(to_py)?,
        })
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names.clone()
    }

    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.points.clone()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud(names={:?}, len={})", self.inner.names, self.inner.len())
    }
}

/// Fitted level-set functions on a shared feature basis.
#[pyclass(name = "Solution", from_py_object)]
#[derive(Clone)]
struct PySolution {
    inner: solver::Solution,
}

#[pymethods]
impl PySolution {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: solver::Solution::from_json(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| to_py(e.into()))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Component values at each point `(t, Y)`.
    fn evaluate(&self, py: Python<'_>, points: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let sol = &self.inner;
        py.detach(|| points.iter().map(|x| sol.evaluate(x)).collect::<Result<Vec<_>, _>>())
            .map_err(to_py)
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.basis.feature_count()
    }

    #[getter]
    fn loss(&self) -> Vec<f64> {
        self.inner.loss.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Solution(input_dim={}, components={}, features={}, stage={:?})",
            self.inner.input_dim(),
            self.inner.n_components(),
            self.inner.basis.feature_count(),
            self.inner.stage
        )
    }
}

/// Result of `solve`: the solution, the extracted cloud and the manifest.
#[pyclass(name = "RunResult")]
struct PyRunResult {
    #[pyo3(get)]
    solution: PySolution,
    #[pyo3(get)]
    cloud: PyPointCloud,
    manifest: run::Manifest,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn manifest<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.manifest)
    }

    /// Writes solution.json, cloud.csv and manifest.json into `directory`.
    fn write(&self, directory: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&directory).map_err(|e| to_py(e.into()))?;
        lsrann_core::io::write_atomic(
            &directory.join(run::SOLUTION_FILE),
            self.solution.inner.to_json().map_err(to_py)?.as_bytes(),
        )
        .map_err(to_py)?;
        self.cloud.inner.write_csv(&directory.join(run::CLOUD_FILE)).map_err(to_py)?;
        self.manifest.write(&directory).map_err(to_py)
    }
}

/// Runs the full pipeline and the zero-set extraction. With `compare=True`
/// the manifest also carries chamfer distances to the oracle manifold.
#[pyfunction]
#[pyo3(signature = (config, compare = false))]
fn solve(py: Python<'_>, config: &PyRunConfig, compare: bool) -> PyResult<PyRunResult> {
    let resolved = config.inner.resolve().map_err(to_py)?;
    let out = py.detach(|| -> Result<run::RunOutput, Error> {
        let mut out = run::execute(&resolved).map_err(|f| f.error)?;
        if compare {
            let reference = run::oracle_cloud(&resolved.problem, &resolved.oracle)?;
            out.manifest.chamfer = Some(run::compare(&out.cloud, &reference, 1e-9)?);
        }
        Ok(out)
    });
    let out = out.map_err(to_py)?;
    Ok(PyRunResult {
        solution: PySolution {
            inner: out.run.solution,
        },
        cloud: PyPointCloud { inner: out.cloud },
        manifest: out.manifest,
    })
}

/// Oracle manifold of the config's case at its oracle times.
#[pyfunction]
fn oracle(py: Python<'_>, config: &PyRunConfig) -> PyResult<PyPointCloud> {
    let resolved = config.inner.resolve().map_err(to_py)?;
    let cloud = py
        .detach(|| run::oracle_cloud(&resolved.problem, &resolved.oracle))
        .map_err(to_py)?;
    Ok(PyPointCloud { inner: cloud })
}

/// Zero set of a saved solution using the config's extraction settings.
#[pyfunction]
fn extract(py: Python<'_>, solution: &PySolution, config: &PyRunConfig) -> PyResult<PyPointCloud> {
    let resolved = config.inner.resolve().map_err(to_py)?;
    let sol = &solution.inner;
    let cloud = py
        .detach(|| run::extract_cloud(&resolved.problem, sol, &resolved.zeroset, resolved.slice_times.as_deref()))
        .map_err(to_py)?;
    Ok(PyPointCloud { inner: cloud })
}

/// Chamfer distances overall and per time slice.
#[pyfunction]
#[pyo3(signature = (cloud, reference, delta = 1e-9))]
fn compare<'py>(py: Python<'py>, cloud: &PyPointCloud, reference: &PyPointCloud, delta: f64) -> PyResult<Bound<'py, PyAny>> {
    let c = run::compare(&cloud.inner, &reference.inner, delta).map_err(to_py)?;
    to_dict(py, &c)
}

/// Chamfer distances between two raw point lists.
#[pyfunction]
fn chamfer<'py>(py: Python<'py>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    let c = lsrann_core::oracle::chamfer(&a, &b).map_err(to_py)?;
    to_dict(py, &c)
}

#[pyfunction]
fn case_ids() -> Vec<String> {
    lsrann_core::problems::case_ids()
}

/// Table parameters of one case, or of every case when `case` is omitted.
#[pyfunction]
#[pyo3(signature = (case = None))]
fn catalog<'py>(py: Python<'py>, case: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    match case {
        Some(id) => to_dict(py, &lsrann_core::problems::catalog(id).map_err(to_py)?.params),
        None => to_dict(py, &lsrann_core::problems::catalog_listing()),
    }
}

#[pymodule]
fn lsrann(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add("LsrannError", py.get_type::<LsrannError>())?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(case_ids, m)?)?;
    m.add_function(wrap_pyfunction!(catalog, m)?)?;
    Ok(())
}
