use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::de::DeserializeOwned;
use serde::Serialize;

use homlab::coarsegrain::{self, hierarchy_sweep, CoarseGrainOptions};
use homlab::ergodic::{self, cascade, ErgodicOptions};
use homlab::fields::io::{read_field, write_field};
use homlab::fields::{CoefficientField, FieldSpec};
use homlab::homexp::{self, HomExperiment, TargetFunction};
use homlab::linalg;
use homlab::norms::{self, EllipticityParams, TailMode};
use homlab::triadic::{CellArray, TriadicCube};
use homlab::HomError;

create_exception!(homlab_py, NumericalError, PyRuntimeError, "A solve or numerical check failed.");

fn to_py(err: HomError) -> PyErr {
    if err.is_config_error() || matches!(err, HomError::OutOfBounds(_) | HomError::NotSpd { .. }) {
        PyValueError::new_err(err.to_string())
    } else {
        NumericalError::new_err(err.to_string())
    }
}

/// Round-trips a Python object through `json` into a serde type.
fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Converts a serde value into plain Python dicts and lists.
fn into_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn field_spec(py: Python<'_>, dim: usize, level: u32, seed: u64, kind: &Bound<'_, PyDict>) -> PyResult<FieldSpec> {
    let spec = PyDict::new(py);
    spec.set_item("dim", dim)?;
    spec.set_item("level", level)?;
    spec.set_item("seed", seed)?;
    spec.set_item("kind", kind)?;
    from_py(py, spec.as_any())
}

/// A cell-wise constant coefficient field on □_level.
#[pyclass(name = "CoefficientField", module = "homlab_py", frozen)]
struct PyField {
    inner: CoefficientField,
}

#[pymethods]
impl PyField {
    /// Generates sample `sample` of a field family, e.g.
    /// `CoefficientField.generate(2, 3, 7, {"kind": "checkerboard", "low": 0.5, "high": 2.0})`.
    #[staticmethod]
    #[pyo3(signature = (dim, level, seed, kind, sample = 0))]
    fn generate(py: Python<'_>, dim: usize, level: u32, seed: u64, kind: &Bound<'_, PyDict>, sample: u64) -> PyResult<Self> {
        let spec = field_spec(py, dim, level, seed, kind)?;
        Ok(Self { inner: spec.generate_sample(sample).map_err(to_py)? })
    }

    /// Isotropic field s = v·I from one value per cell, in row-major cell order.
    #[staticmethod]
    fn from_scalar(dim: usize, level: u32, values: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: CoefficientField::from_scalar(dim, level, &values).map_err(to_py)? })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: read_field(&path).map_err(to_py)?.0 })
    }

    #[pyo3(signature = (path, resolution = 1))]
    fn write(&self, path: PathBuf, resolution: usize) -> PyResult<()> {
        write_field(&path, &self.inner, resolution).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn level(&self) -> u32 {
        self.inner.level()
    }

    #[getter]
    fn side(&self) -> usize {
        self.inner.side()
    }

    #[getter]
    fn cell_count(&self) -> usize {
        self.inner.cell_count()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    /// Symmetric parts, d² entries per cell.
    fn s_values(&self) -> Vec<f64> {
        self.inner.raw_s().to_vec()
    }

    /// Skew parts, d² entries per cell.
    fn k_values(&self) -> Vec<f64> {
        self.inner.raw_k().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("CoefficientField(dim={}, level={}, side={})", self.inner.dim(), self.inner.level(), self.inner.side())
    }
}

fn options(resolution: usize) -> CoarseGrainOptions {
    CoarseGrainOptions { resolution, ..Default::default() }
}

fn cube(field: &CoefficientField, level: Option<u32>, offset: Option<Vec<i64>>) -> PyResult<TriadicCube> {
    let level = level.unwrap_or(field.level());
    let offset = offset.unwrap_or_else(|| vec![0; field.dim()]);
    TriadicCube::new(level, offset).map_err(to_py)
}

/// Coarse-grained matrices s, s*, k, b and A of one triadic cube (default: the whole domain).
#[pyfunction]
#[pyo3(signature = (field, level = None, offset = None, resolution = 1))]
fn coarse_grain<'py>(
    py: Python<'py>,
    field: &PyField,
    level: Option<u32>,
    offset: Option<Vec<i64>>,
    resolution: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cube = cube(&field.inner, level, offset)?;
    let m = coarsegrain::coarse_grain_cube(&field.inner, &cube, &options(resolution)).map_err(to_py)?;
    into_py(py, &m)
}

/// J(□, p, q) of one cube.
#[pyfunction]
#[pyo3(signature = (field, p, q, level = None, offset = None, resolution = 1))]
fn j_value(
    field: &PyField,
    p: Vec<f64>,
    q: Vec<f64>,
    level: Option<u32>,
    offset: Option<Vec<i64>>,
    resolution: usize,
) -> PyResult<f64> {
    let d = field.inner.dim();
    if p.len() != d || q.len() != d {
        return Err(PyValueError::new_err(format!("p and q must have length {d}")));
    }
    let cube = cube(&field.inner, level, offset)?;
    let m = coarsegrain::coarse_grain_cube(&field.inner, &cube, &options(resolution)).map_err(to_py)?;
    Ok(m.j(&p, &q))
}

/// Hierarchy sweep report: sizes and minimum slacks of the coarse-graining inequalities.
#[pyfunction]
#[pyo3(signature = (field, k_min = 0, resolution = 1))]
fn hierarchy_report<'py>(py: Python<'py>, field: &PyField, k_min: u32, resolution: usize) -> PyResult<Bound<'py, PyAny>> {
    let f = &field.inner;
    let sweep = hierarchy_sweep(f, &f.domain(), k_min, &options(resolution)).map_err(to_py)?;
    into_py(py, &sweep.report)
}

/// Coarse-grained ellipticity constants λ_s and Λ_t with the Besov and Lebesgue norms.
#[pyfunction]
#[pyo3(signature = (field, s = 0.3, t = 0.3, p = 4.0, q = 4.0, resolution = 1))]
fn ellipticity<'py>(
    py: Python<'py>,
    field: &PyField,
    s: f64,
    t: f64,
    p: f64,
    q: f64,
    resolution: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let f = &field.inner;
    let sweep = hierarchy_sweep(f, &f.domain(), 0, &options(resolution)).map_err(to_py)?;
    let params = EllipticityParams { s, t, p, q, ..Default::default() };
    let report = norms::ellipticity_constants(&sweep.cache, f, &params).map_err(to_py)?;
    into_py(py, &report)
}

fn cell_array(dim: usize, level: u32, ncomp: usize, values: Vec<f64>) -> PyResult<(CellArray, TriadicCube)> {
    let domain = TriadicCube::domain(dim, level);
    let side = domain.side() as usize;
    if values.len() != side.pow(dim as u32) * ncomp {
        return Err(PyValueError::new_err(format!(
            "expected {} values for {ncomp} components on □_{level}",
            side.pow(dim as u32) * ncomp
        )));
    }
    Ok((CellArray { dim, side, ncomp, data: values }, domain))
}

fn tail_mode(tail: bool) -> TailMode {
    if tail {
        TailMode::TailCorrected
    } else {
        TailMode::Truncated
    }
}

/// Ring Ĥ^{−s} norm of cell values on □_level (`ncomp` entries per cell).
#[pyfunction]
#[pyo3(signature = (values, dim, level, s, ncomp = 1, tail = true))]
fn ring_norm(values: Vec<f64>, dim: usize, level: u32, s: f64, ncomp: usize, tail: bool) -> PyResult<f64> {
    let (v, domain) = cell_array(dim, level, ncomp, values)?;
    norms::ring_dual_norm(&v, s, &domain, tail_mode(tail)).map_err(to_py)
}

/// Scale-discounted supremum norm Σ_k 3^{2t(k−n)} max |⨍f| of cell values on □_level.
#[pyfunction]
#[pyo3(signature = (values, dim, level, t, ncomp = 1, tail = true))]
fn b_norm(values: Vec<f64>, dim: usize, level: u32, t: f64, ncomp: usize, tail: bool) -> PyResult<f64> {
    let (v, domain) = cell_array(dim, level, ncomp, values)?;
    norms::bnorm(&v, t, &domain, tail_mode(tail)).map_err(to_py)
}

/// Monte Carlo estimate of E[A(□_n)] with the derived means and bound checks.
#[pyfunction]
#[pyo3(signature = (dim, kind, n, samples, seed = 0, resolution = 1))]
fn estimate_abar<'py>(
    py: Python<'py>,
    dim: usize,
    kind: &Bound<'py, PyDict>,
    n: u32,
    samples: usize,
    seed: u64,
    resolution: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = field_spec(py, dim, 0, seed, kind)?;
    let opts = ErgodicOptions { coarse_grain: options(resolution), spatial_level: None };
    let est = ergodic::estimate_abar(&spec, n, samples, &opts).map_err(to_py)?;
    into_py(py, &est)
}

/// Classical laminate homogenized matrix for layers alternating along the first axis.
#[pyfunction]
fn laminate_a_bar(dim: usize, a1: f64, a2: f64) -> Vec<Vec<f64>> {
    linalg::to_rows(&homexp::laminate_a_bar(dim, a1, a2))
}

/// Ring-norm gradient and flux errors of the Dirichlet experiment for one seed, one dict per scale.
#[pyfunction]
#[pyo3(signature = (dim, kind, a_bar, target, alpha, n_min, n_max, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn homogenization_errors<'py>(
    py: Python<'py>,
    dim: usize,
    kind: &Bound<'py, PyDict>,
    a_bar: Vec<Vec<f64>>,
    target: &Bound<'py, PyDict>,
    alpha: f64,
    n_min: u32,
    n_max: u32,
    seed: u64,
) -> PyResult<Bound<'py, PyList>> {
    let spec = field_spec(py, dim, 0, seed, kind)?;
    let a_bar = linalg::from_rows(&a_bar).map_err(to_py)?;
    let target: TargetFunction = from_py(py, target.as_any())?;
    let exp = HomExperiment::new(spec, a_bar, target, alpha, n_min, n_max).map_err(to_py)?;
    let records = homexp::run_dirichlet_experiment(&exp, seed).map_err(to_py)?;
    let out = PyList::empty(py);
    for r in &records {
        out.append(into_py(py, r)?)?;
    }
    Ok(out)
}

/// Empirical E[W^p] of the cascade layer weights against exp(p(p−1)σ²/2).
#[pyfunction]
#[pyo3(signature = (sigma, p, count, seed = 0))]
fn cascade_moment<'py>(py: Python<'py>, sigma: f64, p: f64, count: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    into_py(py, &cascade::layer_moment(sigma, p, count, seed).map_err(to_py)?)
}

/// Runs the `homlab` command line with `args` (without the program name) and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> u8 {
    homlab::cli::run_code(std::iter::once("homlab".to_string()).chain(args))
}

#[pymodule]
fn homlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_function(wrap_pyfunction!(coarse_grain, m)?)?;
    m.add_function(wrap_pyfunction!(j_value, m)?)?;
    m.add_function(wrap_pyfunction!(hierarchy_report, m)?)?;
    m.add_function(wrap_pyfunction!(ellipticity, m)?)?;
    m.add_function(wrap_pyfunction!(ring_norm, m)?)?;
    m.add_function(wrap_pyfunction!(b_norm, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_abar, m)?)?;
    m.add_function(wrap_pyfunction!(laminate_a_bar, m)?)?;
    m.add_function(wrap_pyfunction!(homogenization_errors, m)?)?;
    m.add_function(wrap_pyfunction!(cascade_moment, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
