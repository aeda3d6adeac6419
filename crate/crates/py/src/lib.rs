//! Python bindings: configuration, corruption, encoding, and the network.

use ndarray::Array1;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use qsnn_core::config::{set_path, Profile, RunConfig};
use qsnn_core::corrupt::{self, CorruptionSpec, NoiseKind};
use qsnn_core::dataio;
use qsnn_core::encoder::{encode_image, AggregationMode};
use qsnn_core::experiment::Pipeline;
use qsnn_core::neuro;
use qsnn_core::trainer::{self, EncodedSample, Network, Trainer};
use std::collections::BTreeMap;
use std::path::PathBuf;
use toml::{Table, Value};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_toml(v: &Bound<'_, PyAny>) -> PyResult<Value> {
    if let Ok(b) = v.extract::<bool>() {
        Ok(Value::Boolean(b))
    } else if let Ok(i) = v.extract::<i64>() {
        Ok(Value::Integer(i))
    } else if let Ok(f) = v.extract::<f64>() {
        Ok(Value::Float(f))
    } else if let Ok(s) = v.extract::<String>() {
        Ok(Value::String(s))
    } else {
        Err(PyValueError::new_err("override values must be bool, int, float or str"))
    }
}

/// Run configuration: profile defaults, an optional TOML file (or run
/// manifest), then dotted-key overrides such as `{"training.epochs": 2}`.
#[pyclass(name = "Config", module = "qsnn", skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (profile=None, path=None, overrides=None))]
    fn new(
        profile: Option<&str>,
        path: Option<PathBuf>,
        overrides: Option<BTreeMap<String, Bound<'_, PyAny>>>,
    ) -> PyResult<Self> {
        let profile = profile.map(str::parse::<Profile>).transpose().map_err(value_err)?;
        let mut table = Table::new();
        for (k, v) in overrides.unwrap_or_default() {
            set_path(&mut table, &k, to_toml(&v)?);
        }
        let inner = RunConfig::resolve(profile, path.as_deref(), &table).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.model.hidden
    }

    #[getter]
    fn dataset(&self) -> String {
        self.inner.data.dataset.clone()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(dataset={:?}, hidden={}, seed={})",
            self.inner.data.dataset, self.inner.model.hidden, self.inner.seed
        )
    }
}

fn config_or_default(cfg: Option<&PyConfig>) -> RunConfig {
    cfg.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Encoded image: per-pixel phases, rates, onsets and the spike raster.
#[pyclass(name = "Encoding", module = "qsnn", get_all)]
pub struct PyEncoding {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub phases: Vec<f64>,
    pub rates: Vec<f64>,
    pub t0: Vec<usize>,
    /// One list of 0/1 per pixel.
    pub spikes: Vec<Vec<u8>>,
    pub psp: Vec<f64>,
}

/// Corruption plus encoding under one configuration.
#[pyclass(name = "Encoder", module = "qsnn")]
pub struct PyEncoder {
    cfg: RunConfig,
    pipe: Pipeline,
}

#[pymethods]
impl PyEncoder {
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&PyConfig>) -> PyResult<Self> {
        let cfg = config_or_default(config);
        let pipe = Pipeline::from_config(&cfg).map_err(value_err)?;
        Ok(Self { cfg, pipe })
    }

    /// Corrupts `image` (row-major intensities in [0, 1]) and encodes it.
    /// `mode` defaults to the configured aggregation for the noise kind.
    #[pyo3(signature = (image, width, height, noise="invert", param=0.0, seed=0, mode=None))]
    #[allow(clippy::too_many_arguments)]
    fn encode(
        &self,
        image: Vec<f64>,
        width: usize,
        height: usize,
        noise: &str,
        param: f64,
        seed: u64,
        mode: Option<&str>,
    ) -> PyResult<PyEncoding> {
        let kind: NoiseKind = noise.parse().map_err(value_err)?;
        let mode = match mode {
            Some(m) => m.parse::<AggregationMode>().map_err(value_err)?,
            None => self.cfg.aggregation_for(kind),
        };
        let spec = CorruptionSpec {
            corruption: kind.with_param(param),
            seed,
        };
        let img = spec.apply(width, height, &image).map_err(value_err)?;
        let t = encode_image(&img, mode, &self.pipe.encode, seed).map_err(value_err)?;
        let psp = (0..t.n_pixels)
            .map(|i| neuro::psp(t.train(i), &self.pipe.kernel))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        Ok(PyEncoding {
            p: t.outcomes.iter().map(|o| o.0).collect(),
            q: t.outcomes.iter().map(|o| o.1).collect(),
            phases: (0..t.n_pixels).map(|i| t.phases.phase(i)).collect(),
            rates: t.rates.clone(),
            t0: t.t0.clone(),
            spikes: (0..t.n_pixels)
                .map(|i| t.train(i).iter().map(|&s| u8::from(s)).collect())
                .collect(),
            psp,
        })
    }
}

/// Returns `(theta, blended)` for a corrupted image.
#[pyfunction]
#[pyo3(signature = (image, width, height, noise, param, seed=0))]
fn corrupt_image(
    image: Vec<f64>,
    width: usize,
    height: usize,
    noise: &str,
    param: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let kind: NoiseKind = noise.parse().map_err(value_err)?;
    let img = CorruptionSpec {
        corruption: kind.with_param(param),
        seed,
    }
    .apply(width, height, &image)
    .map_err(value_err)?;
    Ok((img.theta().to_vec(), img.blended().to_vec()))
}

/// Smallest angle in [0, pi/2] whose blend of `x` is `y`.
#[pyfunction]
fn solve_theta(x: f64, y: f64) -> f64 {
    corrupt::solve_theta(x, y)
}

/// Two-layer compartment network with its Adam state.
#[pyclass(name = "Network", module = "qsnn")]
pub struct PyNetwork {
    trainer: Trainer,
}

fn samples(psps: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Vec<EncodedSample>> {
    if psps.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} inputs but {} labels",
            psps.len(),
            labels.len()
        )));
    }
    Ok(psps
        .into_iter()
        .zip(labels)
        .map(|(p, label)| EncodedSample {
            psp: Array1::from(p),
            label,
        })
        .collect())
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (n_in=784, n_hidden=None, n_out=10, seed=None, config=None))]
    fn new(n_in: usize, n_hidden: Option<usize>, n_out: usize, seed: Option<u64>, config: Option<&PyConfig>) -> Self {
        let cfg = config_or_default(config);
        let net = Network::new(
            n_in,
            n_hidden.unwrap_or(cfg.model.hidden),
            n_out,
            cfg.compartment_params(),
            seed.unwrap_or(cfg.seed),
        );
        Self {
            trainer: Trainer::new(net, cfg.adam(), cfg.teaching()),
        }
    }

    /// Loads a saved model; optimizer and teaching settings come from `config`.
    #[staticmethod]
    #[pyo3(signature = (path, config=None))]
    fn load(path: PathBuf, config: Option<&PyConfig>) -> PyResult<Self> {
        let cfg = config_or_default(config);
        let net = dataio::load_model(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self {
            trainer: Trainer::new(net, cfg.adam(), cfg.teaching()),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        dataio::save_model(&self.trainer.net, &path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let n = &self.trainer.net;
        (n.n_in(), n.n_hidden(), n.n_out())
    }

    /// Output firing rates for one PSP vector.
    fn forward(&self, psp: Vec<f64>) -> PyResult<Vec<f64>> {
        let (_, out) = self.trainer.net.forward(&Array1::from(psp)).map_err(value_err)?;
        Ok(out.rates.to_vec())
    }

    fn predict(&self, psp: Vec<f64>) -> PyResult<usize> {
        self.trainer.net.predict(&Array1::from(psp)).map_err(value_err)
    }

    /// One shuffled epoch; returns `(accuracy, mean loss)` seen during the pass.
    #[pyo3(signature = (psps, labels, batch_size=1, seed=0))]
    fn train_epoch(&mut self, psps: Vec<Vec<f64>>, labels: Vec<usize>, batch_size: usize, seed: u64) -> PyResult<(f64, f64)> {
        let s = samples(psps, labels)?;
        let m = self.trainer.train_epoch(&s, batch_size, seed).map_err(value_err)?;
        Ok((m.accuracy, m.loss_mean))
    }

    /// Returns `(accuracy, mean loss)` without changing the weights.
    fn evaluate(&self, psps: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, f64)> {
        let s = samples(psps, labels)?;
        let m = trainer::evaluate(&self.trainer.net, &s, &self.trainer.teach).map_err(value_err)?;
        Ok((m.accuracy, m.loss_mean))
    }
}

type IdxData = (Vec<Vec<f64>>, Vec<u8>, usize, usize);

/// IDX image and label files as `(images, labels, width, height)`;
/// intensities are scaled to [0, 1].
#[pyfunction]
fn load_idx(images: PathBuf, labels: PathBuf) -> PyResult<IdxData> {
    let ds = dataio::load_idx("idx", &images, &labels).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let rows = (0..ds.len()).map(|i| ds.image(i).to_vec()).collect();
    Ok((rows, ds.labels.clone(), ds.width, ds.height))
}

#[pymodule]
fn qsnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyEncoder>()?;
    m.add_class::<PyEncoding>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(corrupt_image, m)?)?;
    m.add_function(wrap_pyfunction!(solve_theta, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    Ok(())
}
