//! Python bindings: the wire envelope, the model with its reference
//! forward pass, AP address derivation, and the scenario runner.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use hermes_core::envelope;
use hermes_core::nn::ModelSpec;
use hermes_core::scenario::ScenarioConfig;
use hermes_core::wifi;

/// The single wire format carried on every simulated link.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Envelope {
    inner: envelope::Envelope,
}

#[pymethods]
impl Envelope {
    #[new]
    #[pyo3(signature = (category, type_tag, src, dst, seq, payload, final_dst=None))]
    fn new(
        category: u8,
        type_tag: u8,
        src: &str,
        dst: &str,
        seq: u32,
        payload: Vec<u8>,
        final_dst: Option<&str>,
    ) -> PyResult<Self> {
        let category = envelope::Category::from_byte(category)
            .ok_or_else(|| PyValueError::new_err(format!("unknown category {category}")))?;
        let parse = |s: &str| {
            s.parse::<std::net::Ipv4Addr>()
                .map_err(|e| PyValueError::new_err(format!("bad address {s:?}: {e}")))
        };
        let mut inner = envelope::Envelope::new(category, type_tag, parse(src)?, parse(dst)?, seq, payload);
        if let Some(f) = final_dst {
            inner.final_dst = parse(f)?;
        }
        Ok(Envelope { inner })
    }

    /// Serialize to wire bytes (22-byte header plus payload).
    fn encode<'py>(&self, py: Python<'py>) -> Bound<'py, pyo3::types::PyBytes> {
        pyo3::types::PyBytes::new(py, &self.inner.encode())
    }

    #[staticmethod]
    fn decode(data: &[u8]) -> PyResult<Envelope> {
        envelope::Envelope::decode(data)
            .map(|inner| Envelope { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn category(&self) -> u8 {
        self.inner.category.to_byte()
    }

    #[getter]
    fn category_name(&self) -> String {
        self.inner.category.name().to_string()
    }

    #[getter]
    fn type_tag(&self) -> u8 {
        self.inner.type_tag
    }

    #[getter]
    fn src(&self) -> String {
        self.inner.src.to_string()
    }

    #[getter]
    fn dst(&self) -> String {
        self.inner.dst.to_string()
    }

    #[getter]
    fn final_dst(&self) -> String {
        self.inner.final_dst.to_string()
    }

    #[getter]
    fn seq(&self) -> u32 {
        self.inner.seq
    }

    #[getter]
    fn payload(&self) -> Vec<u8> {
        self.inner.payload.clone()
    }

    #[getter]
    fn wire_len(&self) -> usize {
        self.inner.wire_len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Envelope(category={}, type_tag={}, src={}, dst={}, seq={}, len={})",
            self.inner.category.name(),
            self.inner.type_tag,
            self.inner.src,
            self.inner.dst,
            self.inner.seq,
            self.inner.wire_len(),
        )
    }
}

/// A multilayer perceptron with the monolithic reference forward pass.
#[pyclass]
struct Model {
    inner: ModelSpec,
}

#[pymethods]
impl Model {
    /// Parse the text model format.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Model> {
        ModelSpec::parse(text)
            .map(|inner| Model { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Seeded random model for experiments.
    #[staticmethod]
    fn random(layer_sizes: Vec<usize>, activation: &str, seed: u64) -> PyResult<Model> {
        let act = hermes_core::nn::Activation::parse(activation)
            .ok_or_else(|| PyValueError::new_err(format!("unknown activation {activation:?}")))?;
        Ok(Model {
            inner: ModelSpec::seeded_random(&layer_sizes, act, seed),
        })
    }

    fn forward(&self, inputs: Vec<f64>) -> PyResult<Vec<f64>> {
        if inputs.len() != self.inner.input_width() {
            return Err(PyValueError::new_err(format!(
                "expected {} inputs, got {}",
                self.inner.input_width(),
                inputs.len()
            )));
        }
        Ok(self.inner.forward(&inputs))
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.layer_sizes.clone()
    }
}

/// Result of one scenario run.
#[pyclass]
struct RunResult {
    #[pyo3(get)]
    trace: String,
    #[pyo3(get)]
    report: String,
    #[pyo3(get)]
    records_jsonl: String,
    #[pyo3(get)]
    oracle_ok: bool,
}

/// Static AP address from a MAC: 10.<m5>.<m6>.1.
#[pyfunction]
fn derive_ap_ip(mac: &str) -> PyResult<String> {
    let mac: wifi::MacAddress = mac
        .parse()
        .map_err(|e: wifi::MacParseError| PyValueError::new_err(e.to_string()))?;
    Ok(wifi::derive_ap_ip(mac).to_string())
}

/// Validate a scenario config; returns a list of "path: message" strings,
/// empty when the config is well-formed.
#[pyfunction]
fn validate_config(text: &str) -> PyResult<Vec<String>> {
    match ScenarioConfig::from_toml(text) {
        Err(e) => Ok(vec![e.to_string()]),
        Ok(config) => Ok(config.validate().iter().map(|e| e.to_string()).collect()),
    }
}

/// Run a scenario from config text and return trace plus reports.
#[pyfunction]
#[pyo3(signature = (text, seed=None, duration_ms=None))]
fn run_scenario(text: &str, seed: Option<u64>, duration_ms: Option<u64>) -> PyResult<RunResult> {
    let mut config = ScenarioConfig::from_toml(text)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(d) = duration_ms {
        config.duration_ms = d;
    }
    let report =
        hermes_core::run_scenario(&config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(RunResult {
        trace: report.trace_text.clone(),
        report: report.report_text(),
        records_jsonl: report.records_jsonl(),
        oracle_ok: report.oracle_ok(),
    })
}

#[pymodule]
fn hermes_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Envelope>()?;
    m.add_class::<Model>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(derive_ap_ip, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
