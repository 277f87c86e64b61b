// SPDX-License-Identifier: Apache-2.0
//! Python bindings. Matrices cross the boundary as lists of row lists;
//! reports come back as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use vdbb::cost::{self, CostCoefficients, OperatingPoint};
use vdbb::dbb::{self, BlockAxis};
use vdbb::dse::{self, CycleSource};
use vdbb::sim::{self, ArrayMode};
use vdbb::tensor::{self, Matrix};

fn err(e: vdbb::Error) -> PyErr {
    match e {
        vdbb::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn i8_matrix(rows: Vec<Vec<i64>>) -> PyResult<Matrix<i8>> {
    let rows = rows
        .into_iter()
        .map(|r| r.into_iter().map(|v| i8::try_from(v)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| PyValueError::new_err("matrix values must be in -128..=127"))?;
    Matrix::from_rows(&rows).map_err(err)
}

fn axis(name: &str) -> PyResult<BlockAxis> {
    match name {
        "rows" => Ok(BlockAxis::Rows),
        "cols" => Ok(BlockAxis::Cols),
        _ => Err(PyValueError::new_err("axis must be 'rows' or 'cols'")),
    }
}

fn format(bz: usize, nnz: usize) -> PyResult<dbb::DbbFormat> {
    dbb::DbbFormat::new(bz, nnz).map_err(err)
}

/// Block size and density bound.
#[pyclass(frozen, skip_from_py_object, name = "DbbFormat", module = "vdbb")]
#[derive(Clone, Copy)]
struct PyDbbFormat(dbb::DbbFormat);

#[pymethods]
impl PyDbbFormat {
    #[new]
    fn new(bz: usize, nnz: usize) -> PyResult<Self> {
        Ok(Self(format(bz, nnz)?))
    }

    #[getter]
    fn bz(&self) -> usize {
        self.0.bz()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.0.nnz()
    }

    #[getter]
    fn sparsity(&self) -> f64 {
        self.0.sparsity()
    }

    /// Dense bits over encoded bits.
    #[getter]
    fn compression_ratio(&self) -> f64 {
        let r = self.0.compression_ratio();
        *r.numer() as f64 / *r.denom() as f64
    }

    fn __repr__(&self) -> String {
        format!("DbbFormat(bz={}, nnz={})", self.0.bz(), self.0.nnz())
    }
}

/// A matrix stored as density-bound blocks.
#[pyclass(frozen, skip_from_py_object, name = "DbbMatrix", module = "vdbb")]
struct PyDbbMatrix(dbb::DbbMatrix);

#[pymethods]
impl PyDbbMatrix {
    #[getter]
    fn rows(&self) -> usize {
        self.0.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.0.cols()
    }

    #[getter]
    fn format(&self) -> PyDbbFormat {
        PyDbbFormat(self.0.format())
    }

    #[getter]
    fn blocks(&self) -> usize {
        self.0.blocks().len()
    }

    #[getter]
    fn pad_count(&self) -> usize {
        self.0.pad_count()
    }

    #[getter]
    fn encoded_bits(&self) -> usize {
        self.0.encoded_bits()
    }

    fn max_block_nnz(&self) -> usize {
        self.0.max_block_nnz()
    }

    fn decode(&self) -> PyResult<Vec<Vec<i8>>> {
        Ok(self.0.decode().map_err(err)?.to_rows())
    }

    /// Serialised `.dbb` file contents.
    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let mut buf = Vec::new();
        dbb::write_dbb(&self.0, &mut buf).map_err(err)?;
        Ok(PyBytes::new(py, &buf))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self(dbb::read_dbb(data).map_err(err)?))
    }

    fn __repr__(&self) -> String {
        format!("DbbMatrix({}x{}, {})", self.0.rows(), self.0.cols(), self.0.format())
    }
}

/// Encodes a compliant int8 matrix; raises ValueError on any over-dense block.
#[pyfunction]
#[pyo3(signature = (matrix, bz, nnz, axis = "rows"))]
fn encode(matrix: Vec<Vec<i64>>, bz: usize, nnz: usize, axis: &str) -> PyResult<PyDbbMatrix> {
    let m = i8_matrix(matrix)?;
    Ok(PyDbbMatrix(dbb::encode_matrix(&m, format(bz, nnz)?, self::axis(axis)?).map_err(err)?))
}

/// Keeps the `nnz` largest-magnitude values of every block.
#[pyfunction]
#[pyo3(signature = (matrix, bz, nnz, axis = "rows"))]
fn prune(matrix: Vec<Vec<i64>>, bz: usize, nnz: usize, axis: &str) -> PyResult<Vec<Vec<i8>>> {
    let m = i8_matrix(matrix)?;
    Ok(dbb::prune_to_dbb(&m, format(bz, nnz)?, self::axis(axis)?).to_rows())
}

/// Blocks over the bound, as `((block_row, block_col), count)` pairs.
#[pyfunction]
#[pyo3(signature = (matrix, bz, nnz, axis = "rows"))]
fn check(matrix: Vec<Vec<i64>>, bz: usize, nnz: usize, axis: &str) -> PyResult<Vec<((usize, usize), usize)>> {
    let m = i8_matrix(matrix)?;
    Ok(dbb::check_dbb(&m, format(bz, nnz)?, self::axis(axis)?)
        .into_iter()
        .map(|v| ((v.block.row, v.block.col), v.count))
        .collect())
}

/// Reference int8 x int8 -> int32 GEMM.
#[pyfunction]
fn gemm_ref(act: Vec<Vec<i64>>, wt: Vec<Vec<i64>>) -> PyResult<Vec<Vec<i32>>> {
    Ok(tensor::gemm_ref(&i8_matrix(act)?, &i8_matrix(wt)?).map_err(err)?.to_rows())
}

/// Array configuration such as `4x8x8_4x8_VDBB_IM2C`.
#[pyclass(frozen, skip_from_py_object, name = "StaConfig", module = "vdbb")]
#[derive(Clone)]
struct PyStaConfig(sim::StaConfig);

#[pymethods]
impl PyStaConfig {
    #[new]
    #[pyo3(signature = (text, gating = None))]
    fn new(text: &str, gating: Option<bool>) -> PyResult<Self> {
        let cfg: sim::StaConfig = text.parse().map_err(err)?;
        let gating = gating.unwrap_or(cfg.mode.supports_act_gating());
        let cfg = cfg.with_gating(gating);
        cfg.validate().map_err(err)?;
        Ok(Self(cfg))
    }

    #[getter]
    fn a(&self) -> usize {
        self.0.a
    }

    #[getter]
    fn b(&self) -> usize {
        self.0.b
    }

    #[getter]
    fn c(&self) -> usize {
        self.0.c
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.0.mode {
            ArrayMode::Sa => "SA",
            ArrayMode::Sta => "STA",
            ArrayMode::StaDbb => "STA_DBB",
            ArrayMode::StaVdbb => "STA_VDBB",
        }
    }

    #[getter]
    fn im2col(&self) -> bool {
        self.0.im2col
    }

    #[getter]
    fn gating(&self) -> bool {
        self.0.act_clock_gating
    }

    #[getter]
    fn tpes(&self) -> usize {
        self.0.tpes()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("StaConfig('{}')", self.0)
    }
}

fn config(cfg: &Bound<'_, PyAny>) -> PyResult<sim::StaConfig> {
    if let Ok(c) = cfg.cast::<PyStaConfig>() {
        return Ok(c.get().0.clone());
    }
    Ok(PyStaConfig::new(&cfg.extract::<String>()?, None)?.0)
}

/// Result of one simulated GEMM.
#[pyclass(frozen, skip_from_py_object, name = "SimResult", module = "vdbb")]
struct PySimResult(sim::SimResult);

#[pymethods]
impl PySimResult {
    #[getter]
    fn output(&self) -> Vec<Vec<i32>> {
        self.0.output.to_rows()
    }

    #[getter]
    fn cycles_total(&self) -> u64 {
        self.0.cycles_total
    }

    #[getter]
    fn cycles_fill(&self) -> u64 {
        self.0.cycles_fill
    }

    #[getter]
    fn cycles_steady(&self) -> u64 {
        self.0.cycles_steady
    }

    #[getter]
    fn cycles_drain(&self) -> u64 {
        self.0.cycles_drain
    }

    #[getter]
    fn passes(&self) -> u64 {
        self.0.passes
    }

    /// Event counters as a dict.
    fn counters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.counters)
    }

    fn __repr__(&self) -> String {
        format!("SimResult(cycles_total={})", self.0.cycles_total)
    }
}

/// Runs `act @ wt` on the cycle-level array model. Dense weights are encoded
/// to the array's block size when the mode is sparse; `nnz` sets the bound
/// the VDBB array runs at.
#[pyfunction]
#[pyo3(signature = (cfg, act, wt, nnz = None))]
fn simulate(
    cfg: &Bound<'_, PyAny>,
    act: Vec<Vec<i64>>,
    wt: &Bound<'_, PyAny>,
    nnz: Option<usize>,
) -> PyResult<PySimResult> {
    let cfg = config(cfg)?;
    let act = i8_matrix(act)?;
    let res = if let Ok(d) = wt.cast::<PyDbbMatrix>() {
        let d = &d.get().0;
        let run = (cfg.mode == ArrayMode::StaVdbb).then(|| nnz.unwrap_or(d.format().nnz()));
        sim::simulate_gemm(&cfg, &act, d, run)
    } else {
        let w = i8_matrix(wt.extract()?)?;
        match cfg.mode {
            ArrayMode::StaDbb | ArrayMode::StaVdbb => {
                let bound = nnz.unwrap_or(match cfg.mode {
                    ArrayMode::StaDbb => cfg.b / 2,
                    _ => cfg.b,
                });
                let d = dbb::encode_matrix(&w, format(cfg.b, bound)?, BlockAxis::Rows).map_err(err)?;
                let run = (cfg.mode == ArrayMode::StaVdbb).then_some(bound);
                sim::simulate_gemm(&cfg, &act, &d, run)
            }
            _ => sim::simulate_gemm(&cfg, &act, &w, None),
        }
    }
    .map_err(err)?;
    Ok(PySimResult(res))
}

/// Power, area and throughput coefficients.
#[pyclass(frozen, skip_from_py_object, name = "CostCoefficients", module = "vdbb")]
#[derive(Clone)]
struct PyCoefficients(CostCoefficients);

#[pymethods]
impl PyCoefficients {
    /// Built-in calibrated values.
    #[staticmethod]
    fn reference() -> Self {
        Self(CostCoefficients::reference())
    }

    /// Loads a TOML or JSON coefficient file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(CostCoefficients::load(&path).map_err(err)?))
    }

    /// Fits the activation-path slope to an anchor file.
    fn calibrate(&self, anchors: PathBuf) -> PyResult<Self> {
        let a = cost::load_anchors(&anchors).map_err(err)?;
        Ok(Self(cost::calibrate(&self.0, &a).map_err(err)?.coeffs))
    }

    #[getter]
    fn slope(&self) -> PyResult<f64> {
        self.0.slope().map_err(err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0)
    }
}

fn coeffs(c: Option<&PyCoefficients>) -> CostCoefficients {
    c.map_or_else(CostCoefficients::reference, |c| c.0.clone())
}

/// Power, area and efficiency of one design at an operating point.
#[pyfunction]
#[pyo3(signature = (cfg, nnz = 3, act_sparsity = 0.5, im2col = true, coefficients = None))]
fn estimate_cost<'py>(
    py: Python<'py>,
    cfg: &Bound<'py, PyAny>,
    nnz: usize,
    act_sparsity: f64,
    im2col: bool,
    coefficients: Option<&PyCoefficients>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(cfg)?;
    let op = dse::point_for(&cfg, &OperatingPoint::new(nnz, act_sparsity, im2col));
    to_py(py, &cost::estimate_cost_at(&cfg, &coeffs(coefficients), &op).map_err(err)?)
}

fn spec(spec: Option<&Bound<'_, PyAny>>) -> PyResult<dse::SweepSpec> {
    match spec {
        None => Ok(dse::default_sweep_4tops()),
        Some(s) => match s.extract::<String>()?.as_str() {
            "4tops" => Ok(dse::default_sweep_4tops()),
            "comparison" => Ok(dse::comparison_sweep()),
            path => dse::SweepSpec::load(path.as_ref()).map_err(err),
        },
    }
}

/// Enumerates and costs a design space. `spec` is a JSON path or one of the
/// built-in names `4tops` and `comparison`. Returns `(points, frontier)`.
#[pyfunction]
#[pyo3(signature = (spec = None, coefficients = None))]
fn sweep<'py>(
    py: Python<'py>,
    spec: Option<&Bound<'py, PyAny>>,
    coefficients: Option<&PyCoefficients>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let spec = self::spec(spec)?;
    let c = coeffs(coefficients);
    let en = dse::enumerate(&spec, &c).map_err(err)?;
    let points = dse::evaluate(en.points, &c, &spec.operating_point).map_err(err)?;
    let front = dse::pareto(&points);
    Ok((to_py(py, &points)?, to_py(py, &front)?))
}

/// Costs a workload file layer by layer on one design.
#[pyfunction]
#[pyo3(signature = (cfg, workload, simulate = false, seed = 0, coefficients = None))]
fn model<'py>(
    py: Python<'py>,
    cfg: &Bound<'py, PyAny>,
    workload: PathBuf,
    simulate: bool,
    seed: u64,
    coefficients: Option<&PyCoefficients>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(cfg)?;
    let w = vdbb::workload::load_workload(&workload).map_err(err)?;
    let source = if simulate { CycleSource::Simulated { seed } } else { CycleSource::Analytic };
    to_py(py, &dse::layer_sweep(&cfg, &coeffs(coefficients), &w, source).map_err(err)?)
}

#[pymodule]
fn _vdbb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDbbFormat>()?;
    m.add_class::<PyDbbMatrix>()?;
    m.add_class::<PyStaConfig>()?;
    m.add_class::<PySimResult>()?;
    m.add_class::<PyCoefficients>()?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(prune, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(gemm_ref, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_cost, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(model, m)?)?;
    Ok(())
}
