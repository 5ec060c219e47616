use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use habitat_core::discovery::{acyclicity_h, notears_fit, DataMatrix, NotearsConfig};
use habitat_core::explain::{band_for, render_rule};
use habitat_core::inference::{AteOptions, CausalEstimate};
use habitat_core::pipeline::{Pipeline, PipelineConfig, PipelineError};
use habitat_core::synth::{generate_presence, generate_sem, run_benchmark, SyntheticSpec};

create_exception!(habitat, HabitatError, PyException);

fn pipeline_err(e: PipelineError) -> PyErr {
    let code = e.exit_code();
    HabitatError::new_err((e.to_string(), code))
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serde value to Python objects through the json module.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<nalgebra::DMatrix<f64>> {
    let d = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(nalgebra::DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn nested(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Runs the full pipeline from a JSON config file and returns the report.
#[pyfunction]
#[pyo3(signature = (config_path, seed=None, offline=None, llm=true))]
fn run(py: Python<'_>, config_path: PathBuf, seed: Option<u64>, offline: Option<bool>, llm: bool) -> PyResult<Py<PyAny>> {
    let mut cfg = PipelineConfig::from_file(&config_path).map_err(pipeline_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = offline {
        cfg.offline = o;
    }
    if !llm {
        cfg.llm.enabled = false;
    }
    let out = py.detach(|| Pipeline::new(cfg).run()).map_err(pipeline_err)?;
    let report = to_py(py, &out.report)?;
    report.bind(py).set_item("run_dir", out.run_dir.to_string_lossy().as_ref())?;
    Ok(report)
}

/// `(h, grad)` of the acyclicity function at `w`.
#[pyfunction]
fn acyclicity(w: Vec<Vec<f64>>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (h, g) = acyclicity_h(&matrix(&w)?).map_err(value_err)?;
    Ok((h, nested(&g)))
}

/// Fits a DAG to the rows of `data` with linear NOTEARS.
#[pyfunction]
#[pyo3(signature = (data, names=None, lambda1=0.1, w_threshold=0.3, standardize=false))]
fn notears(
    py: Python<'_>,
    data: Vec<Vec<f64>>,
    names: Option<Vec<String>>,
    lambda1: f64,
    w_threshold: f64,
    standardize: bool,
) -> PyResult<Py<PyAny>> {
    let d = data.first().map_or(0, Vec::len);
    let names = names.unwrap_or_else(|| (0..d).map(|j| format!("x{j}")).collect());
    let matrix = DataMatrix::from_rows(&data, names).map_err(value_err)?;
    let cfg = NotearsConfig { lambda1, w_threshold, center_only: !standardize, ..NotearsConfig::default() };
    let fit = py.detach(|| notears_fit(&matrix, &cfg)).map_err(value_err)?;
    let doc = to_py(py, &fit.dag.to_document())?;
    let dict = doc.bind(py);
    dict.set_item("h", fit.h_final)?;
    dict.set_item("w_raw", nested(&fit.w_raw))?;
    Ok(doc)
}

/// Label of the effect band containing `ate`, e.g. `"moderate+"`.
#[pyfunction]
fn band(py: Python<'_>, ate: f64) -> PyResult<Py<PyAny>> {
    to_py(py, &band_for(ate).map_err(value_err)?.label)
}

/// Rule-based sentence for a treatment effect on a species.
#[pyfunction]
fn explain_rule(treatment: &str, ate: f64, species: &str) -> PyResult<String> {
    let est = CausalEstimate {
        treatment: treatment.into(),
        ate,
        se: 0.0,
        ci95: (ate, ate),
        n_strata_used: 0,
        n_dropped: 0,
        naive_diff: ate,
        adjustment_set: Vec::new(),
        propensity_fallback: false,
    };
    render_rule(&est, species).map_err(value_err)
}

/// Draws a synthetic linear SEM: graph, data rows and presence labels.
#[pyfunction]
#[pyo3(signature = (spec=None))]
fn synth_generate(py: Python<'_>, spec: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
    let spec: SyntheticSpec = spec.map(|s| from_py(py, s)).transpose()?.unwrap_or_default();
    spec.validate().map_err(value_err)?;
    let (dag, data) = generate_sem(&spec).map_err(value_err)?;
    let presence = generate_presence(&data, &spec).map_err(value_err)?;
    let doc = to_py(py, &dag.to_document())?;
    let dict = doc.bind(py);
    let rows: Vec<Vec<f64>> = (0..data.n()).map(|i| data.x().row(i).iter().copied().collect()).collect();
    dict.set_item("data", rows)?;
    dict.set_item("presence", presence)?;
    Ok(doc)
}

/// Structure-recovery and ATE benchmark over `trials` seeds.
#[pyfunction]
#[pyo3(signature = (spec, trials=20, lambda1=None, n_mc=200_000, bootstrap=200))]
fn synth_benchmark(
    py: Python<'_>,
    spec: &Bound<'_, PyAny>,
    trials: usize,
    lambda1: Option<f64>,
    n_mc: usize,
    bootstrap: usize,
) -> PyResult<Py<PyAny>> {
    let spec: SyntheticSpec = from_py(py, spec)?;
    spec.validate().map_err(value_err)?;
    let mut cfg = NotearsConfig::default();
    if let Some(l) = lambda1 {
        cfg.lambda1 = l;
    }
    let opts = AteOptions { bootstrap, ..AteOptions::default() };
    let summary = py.detach(|| run_benchmark(&spec, trials, &cfg, &opts, n_mc)).map_err(value_err)?;
    to_py(py, &summary)
}

#[pymodule]
fn habitat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("HabitatError", m.py().get_type::<HabitatError>())?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(acyclicity, m)?)?;
    m.add_function(wrap_pyfunction!(notears, m)?)?;
    m.add_function(wrap_pyfunction!(band, m)?)?;
    m.add_function(wrap_pyfunction!(explain_rule, m)?)?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(synth_benchmark, m)?)?;
    Ok(())
}
