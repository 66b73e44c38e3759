//! Python bindings. Reports come back as plain dicts and lists.

use emo_core::analysis::formula::{formula_costs as formula_impl, FormulaArgs, ModuleKind};
use emo_core::analysis::mpl::probe_plan;
use emo_core::analysis::{count_costs, influence_mask as influence_impl, max_path_length, InfluenceMode};
use emo_core::{build_emo, equivalence_check, Init, IrmbConfig, Precision, Shape, Tensor, Variant};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

fn err(e: emo_core::Error) -> PyErr {
    match e {
        emo_core::Error::NonFinite { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: std::str::FromStr<Err = emo_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// Parameter and MAC breakdown of a preset at a square resolution.
#[pyfunction]
#[pyo3(signature = (preset, resolution = 224))]
fn count<'py>(py: Python<'py>, preset: &str, resolution: usize) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse::<Variant>(preset)?.config();
    to_py(py, &count_costs(&cfg, resolution, resolution).map_err(err)?)
}

/// Closed-form params and FLOPs of a `mhsa`, `w-mhsa`, `conv` or `dw-conv` module.
#[pyfunction]
#[pyo3(signature = (module, channels, map, window, kernel = 3, groups = 1))]
fn formula<'py>(
    py: Python<'py>,
    module: &str,
    channels: u64,
    map: u64,
    window: u64,
    kernel: u64,
    groups: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let kind = parse::<ModuleKind>(module)?;
    to_py(py, &formula_impl(kind, FormulaArgs { channels, map, window, kernel, groups }).map_err(err)?)
}

/// Attention before versus after the expansion MLP on one seeded block.
#[pyfunction]
#[pyo3(signature = (channels, heads, groups = None, expansion_ratio = 2.0, window = None, seed = 0, precision = "f64"))]
#[allow(clippy::too_many_arguments)]
fn equivalence<'py>(
    py: Python<'py>,
    channels: usize,
    heads: usize,
    groups: Option<usize>,
    expansion_ratio: f64,
    window: Option<usize>,
    seed: u64,
    precision: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = IrmbConfig {
        heads: Some(heads),
        expand_groups: groups,
        window,
        ..IrmbConfig::new(channels, channels, expansion_ratio)
    };
    let r = match parse::<Precision>(precision)? {
        Precision::F32 => equivalence_check::<f32>(&cfg, seed),
        Precision::F64 => equivalence_check::<f64>(&cfg, seed),
    };
    to_py(py, &r.map_err(err)?)
}

/// Corner-to-corner block count of a repeated probe block.
#[pyfunction]
#[pyo3(signature = (map, kernel = 3, window = None, attn = true, conv = true))]
fn mpl<'py>(
    py: Python<'py>,
    map: usize,
    kernel: usize,
    window: Option<usize>,
    attn: bool,
    conv: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let plan = probe_plan(kernel, window, attn, conv).map_err(err)?;
    to_py(py, &max_path_length(&plan, map).map_err(err)?)
}

/// Boolean `map x map` mask of input pixels that reach `source` through
/// `depth` identical probe blocks.
#[pyfunction]
#[pyo3(signature = (map, depth, source = (0, 0), kernel = 3, window = None, attn = true, conv = true, mode = "structural", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn influence(
    map: usize,
    depth: usize,
    source: (usize, usize),
    kernel: usize,
    window: Option<usize>,
    attn: bool,
    conv: bool,
    mode: &str,
    seed: u64,
) -> PyResult<Vec<Vec<bool>>> {
    let mode = match mode {
        "structural" => InfluenceMode::Structural,
        "vjp" => InfluenceMode::Vjp { seed },
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}` (expected structural or vjp)"))),
    };
    let plan = probe_plan(kernel, window, attn, conv).map_err(err)?;
    let m = influence_impl(&vec![plan; depth], map, map, source, mode).map_err(err)?;
    Ok((0..map).map(|y| (0..map).map(|x| m.contains(y, x)).collect()).collect())
}

/// A 64-bit EMO model.
#[pyclass(name = "Model")]
struct PyModel {
    inner: emo_core::Model<f64>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (preset, seed = 0, init = "default", num_classes = None))]
    fn new(preset: &str, seed: u64, init: &str, num_classes: Option<usize>) -> PyResult<Self> {
        let mut cfg = parse::<Variant>(preset)?.config();
        if let Some(n) = num_classes {
            cfg.num_classes = n;
        }
        let init = match init {
            "default" => Init::Default,
            "generic" => Init::Generic,
            other => return Err(PyValueError::new_err(format!("unknown init `{other}` (expected default or generic)"))),
        };
        Ok(PyModel { inner: build_emo(&cfg, seed, init).map_err(err)? })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.config.num_classes
    }

    /// Logits for a flat NCHW buffer; returns one list per batch item.
    fn forward(&self, data: Vec<f64>, shape: (usize, usize, usize, usize)) -> PyResult<Vec<Vec<f64>>> {
        let x = Tensor::new(Shape::new(shape.0, shape.1, shape.2, shape.3), data).map_err(err)?;
        let logits = self.inner.forward(&x).map_err(err)?;
        let c = logits.shape().c;
        Ok(logits.to_f64_vec().chunks(c).map(|r| r.to_vec()).collect())
    }

    fn save_weights<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &self.inner.save_weights().map_err(err)?))
    }

    fn load_weights(&mut self, data: &[u8]) -> PyResult<()> {
        self.inner.load_weights(data).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Model({}, params={})", self.inner.config.name, self.inner.param_count())
    }
}

#[pymodule]
fn emo_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(count, m)?)?;
    m.add_function(wrap_pyfunction!(formula, m)?)?;
    m.add_function(wrap_pyfunction!(equivalence, m)?)?;
    m.add_function(wrap_pyfunction!(mpl, m)?)?;
    m.add_function(wrap_pyfunction!(influence, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}
