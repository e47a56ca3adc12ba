//! Python bindings. Tensors cross the boundary as flat lists plus a shape.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use daenr::cli::{execute_run, RunConfig};
use daenr::data::{load_region, synth_lnp, RegionDataset, SynthConfig};
use daenr::metrics::{self, MetricsReport};
use daenr::models::{checkpoint, parse_arch, Backbone, Model, ModelConfig, ReadoutKind};
use daenr::presets::{lookup, region_index, PresetTable};
use daenr::training::TrainConfig;
use daenr::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// A loaded or generated region.
#[pyclass(name = "RegionDataset", module = "daenr", skip_from_py_object)]
#[derive(Clone)]
pub struct PyRegion {
    inner: RegionDataset,
}

#[pymethods]
impl PyRegion {
    #[getter]
    fn region_name(&self) -> String {
        self.inner.region_name.clone()
    }

    #[getter]
    fn n_train(&self) -> usize {
        self.inner.n_train()
    }

    #[getter]
    fn n_test(&self) -> usize {
        self.inner.n_test()
    }

    #[getter]
    fn n_neurons(&self) -> usize {
        self.inner.n_neurons()
    }

    #[getter]
    fn repeats(&self) -> usize {
        self.inner.repeats()
    }

    #[getter]
    fn ground_truth_informative(&self) -> Option<Vec<bool>> {
        self.inner.ground_truth_informative.clone()
    }

    /// `(flat values, shape)` of one of the four arrays.
    fn array(&self, name: &str) -> PyResult<(Vec<f32>, Vec<usize>)> {
        let t = match name {
            "train_stimuli" => &self.inner.train_stimuli,
            "train_responses" => &self.inner.train_responses,
            "test_stimuli" => &self.inner.test_stimuli,
            "test_responses" => &self.inner.test_responses,
            other => return Err(PyValueError::new_err(format!("no array named {other:?}"))),
        };
        Ok((t.data().to_vec(), t.shape().to_vec()))
    }

    fn select_neurons(&self, ids: Vec<usize>) -> PyResult<Self> {
        Ok(PyRegion {
            inner: self.inner.select_neurons(&ids).map_err(py_err)?,
        })
    }

    /// Writes the dataset and returns the manifest path.
    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        self.inner.save(dir).map_err(py_err)
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }
}

/// Synthetic region from a preset, with optional overrides.
#[pyfunction]
#[pyo3(signature = (preset="region3", seed=0, informative_fraction=None, n_train=None, n_neurons=None))]
fn synth(
    preset: &str,
    seed: u64,
    informative_fraction: Option<f64>,
    n_train: Option<usize>,
    n_neurons: Option<usize>,
) -> PyResult<PyRegion> {
    let mut cfg = SynthConfig::preset(preset).map_err(py_err)?;
    cfg.seed = seed;
    if let Some(f) = informative_fraction {
        cfg.informative_fraction = f;
    }
    if let Some(n) = n_train {
        cfg.n_train = n;
    }
    if let Some(m) = n_neurons {
        cfg.n_neurons = m;
    }
    Ok(PyRegion {
        inner: synth_lnp(&cfg).map_err(py_err)?,
    })
}

#[pyfunction]
#[pyo3(name = "load_region")]
fn py_load_region(manifest: PathBuf) -> PyResult<PyRegion> {
    Ok(PyRegion {
        inner: load_region(manifest).map_err(py_err)?,
    })
}

/// JSON run configuration for one variant; edit the returned string or pass
/// it straight to `train`.
#[pyfunction]
#[pyo3(signature = (n_neurons, backbone="cae", readout="fr", tap=1, alpha=1.0, beta=1e-3, arch=None, latent_dim=None, max_steps=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn run_config(
    n_neurons: usize,
    backbone: &str,
    readout: &str,
    tap: usize,
    alpha: f64,
    beta: f64,
    arch: Option<&str>,
    latent_dim: Option<usize>,
    max_steps: Option<u64>,
    seed: u64,
) -> PyResult<String> {
    let backbone: Backbone = parse(backbone)?;
    let mut model = ModelConfig::new(backbone, parse::<ReadoutKind>(readout)?, tap, n_neurons);
    if let Some(a) = arch {
        model.arch = parse_arch(a).map_err(py_err)?;
        model.arch.backbone = backbone;
    }
    if let Some(d) = latent_dim {
        model.arch.latent_dim = d;
    }
    model.alpha = alpha;
    model.beta = beta;
    model.seed = seed;
    model.validate().map_err(py_err)?;
    let mut train = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if let Some(s) = max_steps {
        train.max_steps = s;
    }
    let cfg = RunConfig {
        model,
        train,
        p_threshold: 0.05,
    };
    serde_json::to_string(&cfg).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn report_dict(py: Python<'_>, r: &MetricsReport) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(r).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (s,))?.unbind())
}

/// Trains one configuration into `out` and returns its test report as a dict.
#[pyfunction]
fn train(
    py: Python<'_>,
    config_json: &str,
    data: &PyRegion,
    manifest: PathBuf,
    out: PathBuf,
) -> PyResult<Py<PyAny>> {
    let cfg: RunConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let summary = py
        .detach(|| execute_run(&cfg, &data.inner, &manifest, &out, |_| {}))
        .map_err(py_err)?;
    report_dict(py, &summary.report)
}

/// Re-evaluates a saved checkpoint on `data`.
#[pyfunction]
#[pyo3(signature = (checkpoint_dir, data, p_threshold=0.05))]
fn evaluate(
    py: Python<'_>,
    checkpoint_dir: PathBuf,
    data: &PyRegion,
    p_threshold: f64,
) -> PyResult<Py<PyAny>> {
    let (model, _) = checkpoint::load::<f32>(&checkpoint_dir).map_err(py_err)?;
    let (report, _) = metrics::evaluate(&model, &data.inner, p_threshold).map_err(py_err)?;
    report_dict(py, &report)
}

/// Number of trainable scalars in a configuration.
#[pyfunction]
fn num_parameters(config_json: &str) -> PyResult<usize> {
    let cfg: RunConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(Model::<f32>::new(cfg.model)
        .map_err(py_err)?
        .num_parameters())
}

#[pyfunction]
fn psnr_db(mse: f64) -> f64 {
    metrics::psnr_db(mse)
}

/// SSIM of two row-major grayscale images in `[-1, 1]`.
#[pyfunction]
fn ssim(a: Vec<f64>, b: Vec<f64>, height: usize, width: usize) -> PyResult<f64> {
    if a.len() != height * width || b.len() != height * width || height < 11 || width < 11 {
        return Err(PyValueError::new_err(
            "images must be height*width long and at least 11x11",
        ));
    }
    Ok(metrics::ssim(&a, &b, height, width))
}

#[pyfunction]
fn pearson(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("length mismatch"));
    }
    Ok(metrics::pearson(&a, &b))
}

#[pyfunction]
fn correlation_p_value(r: f64, n: usize) -> f64 {
    metrics::correlation_p_value(r, n)
}

/// `(significant ids, insignificant ids)`.
#[pyfunction]
#[pyo3(signature = (per_neuron_r, n_samples, p_threshold=0.05))]
fn significance_split(
    per_neuron_r: Vec<f64>,
    n_samples: usize,
    p_threshold: f64,
) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let s = metrics::significance_split(&per_neuron_r, n_samples, p_threshold).map_err(py_err)?;
    Ok((s.significant_ids, s.insignificant_ids))
}

/// `(α, β)` from a published table.
#[pyfunction]
fn preset(
    table: &str,
    region: &str,
    backbone: &str,
    readout: &str,
    tap: usize,
) -> PyResult<(f64, f64)> {
    lookup(
        parse::<PresetTable>(table)?,
        region_index(region).map_err(py_err)?,
        parse(backbone)?,
        parse(readout)?,
        tap,
    )
    .map_err(py_err)
}

#[pymodule]
#[pyo3(name = "daenr")]
fn daenr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRegion>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(py_load_region, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(num_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(psnr_db, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_p_value, m)?)?;
    m.add_function(wrap_pyfunction!(significance_split, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    Ok(())
}
