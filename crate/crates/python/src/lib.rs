//! Python bindings. Structured results cross the boundary as JSON and come
//! out as plain dicts and lists on the Python side.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use evalscope::cli::{self, EvaluateArgs, Pitfall};
use evalscope::manifest::{parse_manifest, validate_manifest, ModelManifest};
use evalscope::registry::{AgentQuery, AgentRecord, Registry, SystemClock};
use evalscope::tracing::{compare, summarize, TraceSpan};
use evalscope::version::{Version, VersionConstraint};

/// The binding logic without any Python types, so it can be tested from
/// Rust.
pub mod ops {
    use super::*;

    pub fn to_json<T: Serialize>(value: &T) -> Value {
        serde_json::to_value(value).expect("binding types serialize")
    }

    pub fn pitfall(name: &str) -> Result<Pitfall, String> {
        Ok(match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "color-layout" => Pitfall::ColorLayout,
            "data-layout" => Pitfall::DataLayout,
            "crop" => Pitfall::Crop,
            "normalization-order" => Pitfall::NormalizationOrder,
            "decode" => Pitfall::Decode,
            other => return Err(format!("unknown pitfall `{other}`")),
        })
    }

    pub struct EvaluateOptions {
        pub inputs: Vec<PathBuf>,
        pub dataset: Option<PathBuf>,
        pub overrides: Vec<String>,
        pub trace_level: String,
        pub top_k: usize,
        pub backend: String,
    }

    pub fn evaluate(manifest: PathBuf, o: EvaluateOptions) -> Result<Value, String> {
        let args = EvaluateArgs {
            manifest,
            inputs: o.inputs,
            dataset: o.dataset,
            overrides: o.overrides,
            trace_level: o.trace_level.parse()?,
            top_k: o.top_k,
            backend: o.backend,
            cache_dir: None,
        };
        cli::evaluate(&args).map(|r| to_json(&r)).map_err(|e| e.to_string())
    }

    pub fn pitfall_demo(name: &str) -> Result<Value, String> {
        cli::pitfall_demo(pitfall(name)?, None)
            .map(|d| to_json(&d))
            .map_err(|e| e.to_string())
    }

    pub fn summarize_trace(spans: Vec<TraceSpan>) -> Result<Value, String> {
        summarize(&spans).map(|s| to_json(&s)).map_err(|e| e.to_string())
    }

    pub fn compare_traces(a: Vec<TraceSpan>, b: Vec<TraceSpan>) -> Result<Value, String> {
        let a = summarize(&a).map_err(|e| e.to_string())?;
        let b = summarize(&b).map_err(|e| e.to_string())?;
        Ok(to_json(&compare(&a, &b)))
    }
}

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    PyModule::import(py, "json")?.call_method1("loads", (value.to_string(),))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = PyModule::import(obj.py(), "json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(value_error)
}

/// A parsed model manifest.
#[pyclass(name = "Manifest", module = "evalscope_py", frozen)]
struct PyManifest {
    inner: ModelManifest,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_manifest(text).map(|inner| Self { inner }).map_err(value_error)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        cli::load_manifest_file(&path).map(|inner| Self { inner }).map_err(value_error)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn version(&self) -> String {
        self.inner.version.to_string()
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.task.to_string()
    }

    #[getter]
    fn framework(&self) -> (String, String) {
        (
            self.inner.framework.name.clone(),
            self.inner.framework.version_constraint.as_str().to_string(),
        )
    }

    /// Processing step kinds of each input, in order.
    fn steps(&self) -> Vec<Vec<String>> {
        self.inner
            .inputs
            .iter()
            .map(|i| i.processing.iter().map(|s| s.kind().to_string()).collect())
            .collect()
    }

    fn container(&self, arch: &str, device: &str) -> PyResult<String> {
        self.inner
            .resolve_container(arch, device)
            .map(str::to_string)
            .map_err(value_error)
    }

    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &ops::to_json(&validate_manifest(&self.inner)))
    }

    fn to_yaml(&self) -> String {
        self.inner.to_yaml()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.to_value().to_json())
    }

    fn __repr__(&self) -> String {
        format!("Manifest({} {})", self.inner.name, self.inner.version)
    }
}

/// A semantic-version constraint such as `^1.x` or `>=1.10 and <=1.13.0`.
#[pyclass(name = "VersionConstraint", module = "evalscope_py", frozen)]
struct PyConstraint {
    inner: VersionConstraint,
}

#[pymethods]
impl PyConstraint {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        VersionConstraint::parse(text).map(|inner| Self { inner }).map_err(value_error)
    }

    fn satisfies(&self, version: &str) -> PyResult<bool> {
        let v: Version = version.parse().map_err(value_error)?;
        Ok(self.inner.satisfies(&v))
    }

    fn __repr__(&self) -> String {
        format!("VersionConstraint({:?})", self.inner.as_str())
    }
}

/// An in-process agent registry.
#[pyclass(name = "Registry", module = "evalscope_py", frozen)]
struct PyRegistry {
    inner: Arc<Registry>,
}

#[pymethods]
impl PyRegistry {
    #[new]
    #[pyo3(signature = (heartbeat_interval_ms = 1000))]
    fn new(heartbeat_interval_ms: u64) -> Self {
        Self {
            inner: Arc::new(Registry::new(
                Duration::from_millis(heartbeat_interval_ms),
                Arc::new(SystemClock),
            )),
        }
    }

    /// Publishes an agent record given as a dict.
    fn publish(&self, record: &Bound<'_, PyAny>) -> PyResult<()> {
        let rec: AgentRecord = from_py(record)?;
        self.inner.publish(rec).map(|_| ()).map_err(value_error)
    }

    fn heartbeat(&self, agent_id: &str) -> PyResult<()> {
        self.inner.heartbeat(agent_id).map_err(value_error)
    }

    fn deregister(&self, agent_id: &str) -> bool {
        self.inner.deregister(agent_id)
    }

    /// Live agents matching a filter dict with any of `model`,
    /// `model_constraint`, `framework`, `framework_constraint`, `arch`,
    /// `device`, `interconnect`.
    #[pyo3(signature = (filter = None))]
    fn query<'py>(&self, py: Python<'py>, filter: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
        let q: AgentQuery = match filter {
            Some(f) => from_py(f)?,
            None => AgentQuery::default(),
        };
        to_py(py, &ops::to_json(&self.inner.query(&q)))
    }
}

/// Runs a local evaluation and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (manifest, inputs = Vec::new(), dataset = None, overrides = Vec::new(), trace_level = "none".to_string(), top_k = 5, backend = "reference_linear".to_string()))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    inputs: Vec<PathBuf>,
    dataset: Option<PathBuf>,
    overrides: Vec<String>,
    trace_level: String,
    top_k: usize,
    backend: String,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = ops::EvaluateOptions {
        inputs,
        dataset,
        overrides,
        trace_level,
        top_k,
        backend,
    };
    let report = py
        .detach(|| ops::evaluate(manifest, opts))
        .map_err(PyRuntimeError::new_err)?;
    to_py(py, &report)
}

/// Baseline and pitfall runs side by side for one named pitfall.
#[pyfunction]
fn pitfall_demo<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
    let demo = py.detach(|| ops::pitfall_demo(name)).map_err(PyRuntimeError::new_err)?;
    to_py(py, &demo)
}

/// Exhaustive comparison of the two normalization orders over all bytes.
#[pyfunction]
fn normalization_order_diff<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &ops::to_json(&cli::normalization_order_diff()))
}

/// Per-level totals, layer table and critical path of a list of span dicts.
#[pyfunction]
fn summarize_trace<'py>(py: Python<'py>, spans: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &ops::summarize_trace(from_py(spans)?).map_err(value_error)?)
}

/// Layer-by-layer comparison of two traces, grouping fused layers.
#[pyfunction]
fn compare_traces<'py>(py: Python<'py>, a: &Bound<'py, PyAny>, b: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &ops::compare_traces(from_py(a)?, from_py(b)?).map_err(value_error)?)
}

#[pymodule]
fn evalscope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyManifest>()?;
    m.add_class::<PyConstraint>()?;
    m.add_class::<PyRegistry>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(pitfall_demo, m)?)?;
    m.add_function(wrap_pyfunction!(normalization_order_diff, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_trace, m)?)?;
    m.add_function(wrap_pyfunction!(compare_traces, m)?)?;
    Ok(())
}
