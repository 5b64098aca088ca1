//! Python bindings: distributions, the block codec, and the simulators.
//!
//! Report-style results (experiments, toy grids, drift) come back as plain
//! dicts and lists decoded from their JSON form.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use klms_core::config::ExperimentConfig;
use klms_core::drift::{run_drift as core_run_drift, DriftConfig};
use klms_core::toy::{run_toy as core_run_toy, ToyConfig};
use klms_core::Error;

fn py_err(e: Error) -> PyErr {
    if e.is_config_error() || matches!(e, Error::InvalidParameter(_) | Error::LengthMismatch { .. }) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

/// Hierarchical seed label; equal keys give equal sample streams.
#[pyclass(name = "StreamKey", module = "klms", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyStreamKey(klms_core::StreamKey);

#[pymethods]
impl PyStreamKey {
    #[new]
    fn new(seed: u64) -> Self {
        Self(klms_core::StreamKey::new(seed))
    }

    fn child(&self, tag: &str, value: u64) -> Self {
        Self(self.0.child(tag, value))
    }

    /// First `n` uniforms of the stream this key names.
    fn uniforms(&self, n: usize) -> Vec<f64> {
        let mut s = self.0.stream();
        (0..n).map(|_| s.next_uniform()).collect()
    }

    fn __repr__(&self) -> String {
        let labels: Vec<String> = self.0.labels().iter().map(|(t, v)| format!("{t}={v}")).collect();
        format!("StreamKey({}; {})", self.0.root_seed(), labels.join(", "))
    }
}

/// A product distribution over the coordinates of a model update.
#[pyclass(name = "Distribution", module = "klms", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDistribution(klms_core::ProductDistribution);

#[pymethods]
impl PyDistribution {
    #[staticmethod]
    fn bernoulli(probs: Vec<f64>) -> PyResult<Self> {
        klms_core::ProductDistribution::bernoulli(probs)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn binary_sign(p_pos: Vec<f64>) -> PyResult<Self> {
        klms_core::ProductDistribution::binary_sign(p_pos)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn uniform_sign(dim: usize) -> PyResult<Self> {
        klms_core::ProductDistribution::uniform_sign(dim)
            .map(Self)
            .map_err(py_err)
    }

    /// Masses per coordinate, ordered `(-1, 0, +1)`.
    #[staticmethod]
    #[pyo3(signature = (probs, norm = 1.0))]
    fn ternary(probs: Vec<[f64; 3]>, norm: f64) -> PyResult<Self> {
        klms_core::ProductDistribution::ternary(probs, norm)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn gaussian(means: Vec<f64>, std: f64) -> PyResult<Self> {
        klms_core::ProductDistribution::gaussian(means, std)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.0.kind()).to_lowercase()
    }

    /// Per-coordinate KL(self || p) in nats.
    fn kl(&self, p: &PyDistribution) -> PyResult<Vec<f64>> {
        self.0.kl_per_coordinate(&p.0).map_err(py_err)
    }

    fn sample(&self, key: &PyStreamKey) -> PyResult<Vec<f64>> {
        self.0.sample(0..self.0.dim(), &mut key.0.stream()).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Distribution({}, dim={})", self.kind(), self.0.dim())
    }
}

#[pyclass(name = "CodecParams", module = "klms", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCodecParams(klms_core::CodecParams);

#[pymethods]
impl PyCodecParams {
    #[new]
    #[pyo3(signature = (d_kl_target = None, overhead_r = None, max_block_size = None,
                        kl_max_threshold = None, kl_min_threshold = None))]
    fn new(
        d_kl_target: Option<f64>,
        overhead_r: Option<f64>,
        max_block_size: Option<usize>,
        kl_max_threshold: Option<f64>,
        kl_min_threshold: Option<f64>,
    ) -> PyResult<Self> {
        let mut p = klms_core::CodecParams::default();
        if let Some(t) = d_kl_target {
            p.d_kl_target = t;
            p.kl_max_threshold = 1.5 * t;
            p.kl_min_threshold = 0.5 * t;
        }
        p.overhead_r = overhead_r.unwrap_or(p.overhead_r);
        p.max_block_size = max_block_size.unwrap_or(p.max_block_size);
        p.kl_max_threshold = kl_max_threshold.unwrap_or(p.kl_max_threshold);
        p.kl_min_threshold = kl_min_threshold.unwrap_or(p.kl_min_threshold);
        p.validate().map_err(py_err)?;
        Ok(Self(p))
    }

    #[getter]
    fn bits_per_index(&self) -> u32 {
        self.0.bits_per_index()
    }

    #[getter]
    fn samples_per_index(&self) -> u64 {
        self.0.samples_per_index()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0)
    }
}

#[pyclass(name = "Partition", module = "klms", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPartition(klms_core::BlockPartition);

#[pymethods]
impl PyPartition {
    #[new]
    fn new(starts: Vec<usize>, dim: usize) -> PyResult<Self> {
        klms_core::BlockPartition::new(starts, dim).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn adaptive(kl: Vec<f64>, params: &PyCodecParams) -> PyResult<Self> {
        klms_core::split_blocks_adaptive(&kl, &params.0)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn fixed(dim: usize, size: usize) -> PyResult<Self> {
        klms_core::split_blocks_fixed(dim, size).map(Self).map_err(py_err)
    }

    #[getter]
    fn starts(&self) -> Vec<usize> {
        self.0.starts().to_vec()
    }

    #[getter]
    fn lengths(&self) -> Vec<usize> {
        self.0.lengths()
    }

    fn __len__(&self) -> usize {
        self.0.num_blocks()
    }
}

/// One client message plus what the encoder knows about it.
#[pyclass(name = "Encoded", module = "klms", frozen, skip_from_py_object)]
struct PyEncoded {
    update: klms_core::EncodedUpdate,
    #[pyo3(get)]
    samples: Vec<f64>,
    #[pyo3(get)]
    payload_bits: u64,
    #[pyo3(get)]
    location_bits: u64,
    #[pyo3(get)]
    header_bits: u64,
}

#[pymethods]
impl PyEncoded {
    #[getter]
    fn indices(&self) -> Vec<u64> {
        self.update.indices.clone()
    }

    #[getter]
    fn total_bits(&self) -> u64 {
        self.payload_bits + self.location_bits + self.header_bits
    }
}

/// Encodes `q` against the shared prior `p`, block by block.
#[pyfunction]
#[pyo3(signature = (q, p, partition, params, key, round = 0, client_id = 0, include_locations = false))]
#[allow(clippy::too_many_arguments)]
fn encode(
    q: &PyDistribution,
    p: &PyDistribution,
    partition: &PyPartition,
    params: &PyCodecParams,
    key: &PyStreamKey,
    round: u32,
    client_id: u32,
    include_locations: bool,
) -> PyResult<PyEncoded> {
    let header = klms_core::MessageHeader { round, client_id };
    let out = klms_core::encode_update(&q.0, &p.0, &partition.0, &params.0, &key.0, header, include_locations)
        .map_err(py_err)?;
    Ok(PyEncoded {
        update: out.update,
        samples: out.samples,
        payload_bits: out.cost.payload_bits,
        location_bits: out.cost.location_bits,
        header_bits: out.cost.header_bits,
    })
}

/// Rebuilds the selected samples from wire bytes.
#[pyfunction]
fn decode(
    data: &[u8],
    p: &PyDistribution,
    partition: &PyPartition,
    params: &PyCodecParams,
    key: &PyStreamKey,
) -> PyResult<Vec<f64>> {
    let upd = klms_core::deserialize(data, &params.0).map_err(py_err)?;
    klms_core::decode_update(&p.0, &partition.0, &params.0, &key.0, &upd).map_err(py_err)
}

#[pyfunction]
fn serialize<'py>(py: Python<'py>, encoded: &PyEncoded, params: &PyCodecParams) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = klms_core::serialize(&encoded.update, &params.0).map_err(py_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Runs a federated experiment from its JSON config. Returns
/// `{"summary": {...}, "metrics": [...]}`.
#[pyfunction]
#[pyo3(signature = (config_json, seed = None))]
fn run_experiment(py: Python<'_>, config_json: &str, seed: Option<u64>) -> PyResult<Py<PyAny>> {
    let mut cfg = ExperimentConfig::from_json(config_json, "<python>").map_err(py_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(py_err)?;
    let report = py.detach(|| klms_core::sim::run_experiment(&cfg)).map_err(py_err)?;
    #[derive(Serialize)]
    struct Out<'a> {
        summary: &'a klms_core::sim::ExperimentSummary,
        metrics: &'a [klms_core::sim::RoundMetrics],
    }
    to_py(
        py,
        &Out {
            summary: &report.summary,
            metrics: &report.metrics,
        },
    )
}

/// Runs the two-coordinate mean-estimation grid; rows as dicts.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn run_toy(py: Python<'_>, config_json: Option<&str>) -> PyResult<Py<PyAny>> {
    let cfg: ToyConfig = parse(config_json)?;
    cfg.validate().map_err(py_err)?;
    let rows = py.detach(|| core_run_toy(&cfg)).map_err(py_err)?;
    to_py(py, &rows)
}

#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn run_drift(py: Python<'_>, config_json: Option<&str>) -> PyResult<Py<PyAny>> {
    let cfg: DriftConfig = parse(config_json)?;
    cfg.validate().map_err(py_err)?;
    let report = py.detach(|| core_run_drift(&cfg)).map_err(py_err)?;
    to_py(py, &report)
}

#[pymodule]
fn klms(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStreamKey>()?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyCodecParams>()?;
    m.add_class::<PyPartition>()?;
    m.add_class::<PyEncoded>()?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(serialize, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_toy, m)?)?;
    m.add_function(wrap_pyfunction!(run_drift, m)?)?;
    m.add("HEADER_BITS", klms_core::codec::HEADER_BITS)?;
    Ok(())
}
