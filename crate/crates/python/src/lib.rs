//! Python bindings for `rnnlab_core`.
//!
//! Configurations and results cross the boundary as plain Python
//! dicts/lists (through the `json` module), arrays as nested lists.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

use rnnlab_core::data::{self, ChunkedData, PianoRollDataset, SyntheticConfig};
use rnnlab_core::grad;
use rnnlab_core::harness::demo::{self, DemoConfig};
use rnnlab_core::harness::presets::{self, Corpus};
use rnnlab_core::harness::{self as h, HyperConfig, ModelVariant};
use rnnlab_core::init;
use rnnlab_core::model;
use rnnlab_core::perturb::{self, Norm, RegPenaltySpec};
use rnnlab_core::{Error, RnnParams, SequenceBatch};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Diverged(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Piano-roll corpus with train/valid/test splits of frame lists.
#[pyclass(name = "Dataset", module = "rnnlab")]
struct PyDataset {
    inner: PianoRollDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset { inner: PianoRollDataset::load(path).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyDataset { inner: PianoRollDataset::from_json_str(text).map_err(to_py_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (seed, n_sequences, steps, motif_gap, noise_rate = 0.02))]
    fn synthetic(seed: u64, n_sequences: usize, steps: usize, motif_gap: usize, noise_rate: f64) -> PyResult<Self> {
        let cfg = SyntheticConfig {
            noise_rate,
            ..SyntheticConfig::new(seed, n_sequences, steps, motif_gap)
        };
        Ok(PyDataset { inner: data::synthesize(&cfg).map_err(to_py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py_err)
    }

    fn manifest(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.manifest())
    }

    fn split(&self, py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
        let seqs = split_of(&self.inner, name)?;
        to_py(py, seqs)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(train={}, valid={}, test={})",
            self.inner.train.len(),
            self.inner.valid.len(),
            self.inner.test.len()
        )
    }
}

fn split_of<'a>(d: &'a PianoRollDataset, name: &str) -> PyResult<&'a Vec<data::Sequence>> {
    match name {
        "train" => Ok(&d.train),
        "valid" => Ok(&d.valid),
        "test" => Ok(&d.test),
        other => Err(PyValueError::new_err(format!("unknown split `{other}`"))),
    }
}

/// Network parameters.
#[pyclass(name = "Params", module = "rnnlab")]
struct PyParams {
    inner: RnnParams,
}

#[pymethods]
impl PyParams {
    /// Sparse, spectrally rescaled initialization for an 88-note model.
    #[staticmethod]
    #[pyo3(signature = (hidden, sigma_hh = 0.01, sigma_ih = 0.1, sparsify_k = 15, rho_target = 1.1, seed = 0, notes = data::NOTES))]
    fn init(
        hidden: usize,
        sigma_hh: f64,
        sigma_ih: f64,
        sparsify_k: usize,
        rho_target: f64,
        seed: u64,
        notes: usize,
    ) -> PyResult<Self> {
        let spec = init::InitSpec { sigma_hh, sigma_ih, sparsify_k, rho_target, seed };
        let inner = init::init_params(&spec, model::Shapes::autoregressive(notes, hidden)).map_err(to_py_err)?;
        Ok(PyParams { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::from_json(&text)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: RnnParams = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py_err)?;
        Ok(PyParams { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("params serialize")
    }

    /// Dict of the five arrays as nested lists.
    fn arrays(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.shapes().hidden
    }

    fn spectral_radius(&self) -> PyResult<f64> {
        Ok(init::spectral_radius(&self.inner.w_hh).map_err(to_py_err)?.value)
    }

    /// Clean-weight cross-entropy on one split of `dataset`.
    #[pyo3(signature = (dataset, split = "test"))]
    fn evaluate(&self, dataset: &PyDataset, split: &str) -> PyResult<f64> {
        let seqs = split_of(&dataset.inner, split)?;
        let batch = data::batch_from_sequences(&seqs.iter().collect::<Vec<_>>()).map_err(to_py_err)?;
        model::evaluate(&self.inner, &batch).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        let s = self.inner.shapes();
        format!("Params(input={}, hidden={}, output={})", s.input, s.hidden, s.output)
    }
}

fn chunked(dataset: &PyDataset, chunk_len: usize) -> PyResult<ChunkedData> {
    data::chunk(&dataset.inner, chunk_len).map_err(to_py_err)
}

/// Default small configuration as a dict.
#[pyfunction]
#[pyo3(signature = (hidden = 100, seed = 0))]
fn desk_config(py: Python<'_>, hidden: usize, seed: u64) -> PyResult<Py<PyAny>> {
    to_py(py, &HyperConfig::desk(hidden, seed))
}

/// Published best configuration for `corpus` and `variant` as a dict.
#[pyfunction]
#[pyo3(signature = (corpus, variant = "plain", seed = 0))]
fn preset_config(py: Python<'_>, corpus: &str, variant: &str, seed: u64) -> PyResult<Py<PyAny>> {
    let corpus: Corpus = corpus.parse().map_err(to_py_err)?;
    let variant: ModelVariant = variant.parse().map_err(to_py_err)?;
    to_py(py, &presets::preset(corpus, variant, seed))
}

/// Trains one network; returns `(trace_dict, Params)`.
#[pyfunction]
#[pyo3(signature = (config, dataset, chunk_len = 100))]
fn train(
    py: Python<'_>,
    config: &Bound<'_, PyAny>,
    dataset: &PyDataset,
    chunk_len: usize,
) -> PyResult<(Py<PyAny>, PyParams)> {
    let cfg: HyperConfig = from_py(config)?;
    let data = chunked(dataset, chunk_len)?;
    let out = py.detach(|| h::train(&cfg, &data)).map_err(to_py_err)?;
    Ok((to_py(py, &out.trace)?, PyParams { inner: out.params }))
}

/// Random search; returns the report dict.
#[pyfunction]
#[pyo3(signature = (variant, base, n_trials, dataset, chunk_len = 100, jobs = None))]
fn random_search(
    py: Python<'_>,
    variant: &str,
    base: &Bound<'_, PyAny>,
    n_trials: usize,
    dataset: &PyDataset,
    chunk_len: usize,
    jobs: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let variant: ModelVariant = variant.parse().map_err(to_py_err)?;
    let base: HyperConfig = from_py(base)?;
    let data = chunked(dataset, chunk_len)?;
    let space = h::SearchSpace::default();
    let report = py
        .detach(|| h::random_search(&space, variant, &base, n_trials, &data, jobs))
        .map_err(to_py_err)?;
    to_py(py, &report)
}

/// Sweep one knob (`lambda`, `sigma`, `drop_p`); returns the table dict.
#[pyfunction]
#[pyo3(signature = (axis, values, base, dataset, seeds = 3, chunk_len = 100, jobs = None))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    axis: &str,
    values: Vec<f64>,
    base: &Bound<'_, PyAny>,
    dataset: &PyDataset,
    seeds: usize,
    chunk_len: usize,
    jobs: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let axis: h::SweepAxis = axis.parse().map_err(to_py_err)?;
    let base: HyperConfig = from_py(base)?;
    let data = chunked(dataset, chunk_len)?;
    let table = py
        .detach(|| h::sweep(axis, &values, &base, seeds, &data, jobs))
        .map_err(to_py_err)?;
    to_py(py, &table)
}

/// Single-unit loss surface; returns `{"w": [...], "b": [...], "loss": [[...]]}`.
#[pyfunction]
#[pyo3(signature = (steps = 50, target = 0.7, resolution = 100, w_range = (-10.0, 10.0), b_range = (-10.0, 10.0), penalty = None, norm = "l2"))]
#[allow(clippy::too_many_arguments)]
fn demo_surface(
    py: Python<'_>,
    steps: usize,
    target: f64,
    resolution: usize,
    w_range: (f64, f64),
    b_range: (f64, f64),
    penalty: Option<f64>,
    norm: &str,
) -> PyResult<Py<PyAny>> {
    let norm: Norm = norm.parse().map_err(to_py_err)?;
    let cfg = DemoConfig {
        steps,
        target,
        w_range,
        b_range,
        resolution,
        penalty: penalty.map(|lambda| RegPenaltySpec { norm, lambda }),
    };
    let s = demo::demo_surface(&cfg).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("w", s.w.clone())?;
    out.set_item("b", s.b.clone())?;
    let rows: Vec<Vec<f64>> = s.loss.rows().into_iter().map(|r| r.to_vec()).collect();
    out.set_item("loss", rows)?;
    out.set_item("max_grad_w_above_1", s.max_grad_w_above(1.0))?;
    Ok(out.into_any().unbind())
}

/// Spectral radius of a square matrix given as nested lists.
#[pyfunction]
fn spectral_radius(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    let n = matrix.len();
    if matrix.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    let m = ndarray::Array2::from_shape_vec((n, n), matrix.concat()).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(init::spectral_radius(&m).map_err(to_py_err)?.value)
}

/// `rows x cols` matrix with exactly `k` Gaussian nonzeros per row.
#[pyfunction]
#[pyo3(signature = (rows, cols, k, sigma = 1.0, seed = 0))]
fn sparse_gaussian(rows: usize, cols: usize, k: usize, sigma: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let mut r = rnnlab_core::rng::seeded(seed);
    let m = init::sparse_gaussian(rows, cols, k, sigma, &mut r).map_err(to_py_err)?;
    Ok(m.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Mean and variance of `(w + Δw)ᵀx` under multiplicative weight noise.
#[pyfunction]
fn noisy_moments(w: Vec<f64>, x: Vec<f64>, sigma: f64) -> PyResult<(f64, f64)> {
    perturb::noisy_moments(&w, &x, sigma).map_err(to_py_err)
}

/// Largest relative error between BPTT and extrapolated finite differences
/// on a random network; `variant` selects a fixed perturbation plan.
#[pyfunction]
#[pyo3(signature = (hidden = 5, steps = 7, batch = 2, notes = data::NOTES, seed = 0, scale = 0.3, variant = "plain", strength = 0.1))]
#[allow(clippy::too_many_arguments)]
fn gradcheck(
    hidden: usize,
    steps: usize,
    batch: usize,
    notes: usize,
    seed: u64,
    scale: f64,
    variant: &str,
    strength: f64,
) -> PyResult<f64> {
    let args = rnnlab_core::cli::GradcheckArgs {
        hidden,
        steps,
        batch,
        notes,
        seed,
        scale,
        variant: variant.to_string(),
        strength,
    };
    let (params, frames): (RnnParams, SequenceBatch) = rnnlab_core::cli::gradcheck_problem(&args).map_err(to_py_err)?;
    let variant: ModelVariant = variant.parse().map_err(to_py_err)?;
    let plan = perturb::sample_plan_seeded(&variant.perturbation(strength), params.shapes(), steps, seed)
        .map_err(to_py_err)?;
    grad::grad_check(&params, &frames, Some(&plan)).map_err(to_py_err)
}

#[pymodule]
fn rnnlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyParams>()?;
    m.add_function(wrap_pyfunction!(desk_config, m)?)?;
    m.add_function(wrap_pyfunction!(preset_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(random_search, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(demo_surface, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_radius, m)?)?;
    m.add_function(wrap_pyfunction!(sparse_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(noisy_moments, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("NOTES", data::NOTES)?;
    Ok(())
}
