//! End-to-end runs: load data, encode, train, sweep corruption grids.
//!
//! Every random draw is keyed by `(seed, role, index)`, and parallel maps keep
//! input order, so results do not depend on the number of worker threads.

use crate::baseline::{self, Mlp, MlpTrainer};
use crate::config::RunConfig;
use crate::corrupt::{CorruptError, Corruption, CorruptionSpec, NoiseKind};
use crate::dataio::{self, DataError, Dataset, RunRecord};
use crate::encoder::{encode_image, AggregationMode, EncodeConfig, EncodeError};
use crate::neuro::{make_kernel, psp, NeuroError, TckKernel};
use crate::rng::derive_seed;
use crate::trainer::{evaluate, EncodedSample, Metrics, Network, TrainError, Trainer};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Corrupt(#[from] CorruptError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Neuro(#[from] NeuroError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("bad grid {spec:?}: {reason}")]
    Grid { spec: String, reason: String },
    #[error("model expects {expected} inputs, dataset has {got} pixels")]
    ModelShape { expected: usize, got: usize },
}

// Stream roles under the run seed.
const ROLE_SUBSET: u64 = 1;
const ROLE_INIT: u64 = 2;
const ROLE_ENCODE_TRAIN: u64 = 3;
const ROLE_SHUFFLE: u64 = 4;
const ROLE_CORRUPT: u64 = 5;
const ROLE_ENCODE_TEST: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Test,
}

impl Part {
    fn prefix(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Test => "t10k",
        }
    }
}

/// Image and label paths under `<dir>/<dataset>/`, preferring uncompressed
/// files and falling back to `.gz`.
pub fn dataset_files(dir: &Path, dataset: &str, part: Part) -> (PathBuf, PathBuf) {
    let base = dir.join(dataset);
    let pick = |stem: String| {
        let plain = base.join(&stem);
        if plain.exists() {
            plain
        } else {
            base.join(format!("{stem}.gz"))
        }
    };
    (
        pick(format!("{}-images-idx3-ubyte", part.prefix())),
        pick(format!("{}-labels-idx1-ubyte", part.prefix())),
    )
}

pub fn load_part(dir: &Path, dataset: &str, part: Part) -> Result<Dataset, DataError> {
    let (img, lab) = dataset_files(dir, dataset, part);
    dataio::load_idx(dataset, &img, &lab)
}

/// Train and test splits, subsampled as configured.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset), DataError> {
    let pick = |part, n: usize, role: u64| -> Result<Dataset, DataError> {
        let ds = load_part(&cfg.data.dir, &cfg.data.dataset, part)?;
        if n == 0 || n == ds.len() {
            Ok(ds)
        } else {
            dataio::split(&ds, n, derive_seed(cfg.seed, &[ROLE_SUBSET, role]))
        }
    };
    Ok((
        pick(Part::Train, cfg.data.train_subset, 0)?,
        pick(Part::Test, cfg.data.test_subset, 1)?,
    ))
}

/// Encoder settings and the synaptic kernel that turns trains into PSPs.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub encode: EncodeConfig,
    pub kernel: TckKernel,
}

impl Pipeline {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, ExperimentError> {
        let encode = cfg.encode_config();
        encode.validate()?;
        let kernel = make_kernel(cfg.model.tau, encode.dt, encode.t_window)?;
        Ok(Self { encode, kernel })
    }

    /// PSP vector for one already-corrupted image.
    pub fn encode_one(
        &self,
        img: &crate::encoder::SuperposedImage,
        mode: AggregationMode,
        seed: u64,
    ) -> Result<Array1<f64>, ExperimentError> {
        let spikes = encode_image(img, mode, &self.encode, seed)?;
        (0..spikes.n_pixels)
            .map(|i| psp(spikes.train(i), &self.kernel).map_err(ExperimentError::from))
            .collect::<Result<Vec<_>, _>>()
            .map(Array1::from)
    }

    /// Corrupts and encodes every image in parallel. Image `i` uses the
    /// corruption stream `(seed, i)` and the spike stream `(seed, i)`.
    pub fn encode_dataset(
        &self,
        ds: &Dataset,
        corruption: Corruption,
        mode: AggregationMode,
        corrupt_seed: u64,
        encode_seed: u64,
    ) -> Result<Vec<EncodedSample>, ExperimentError> {
        corruption.validate()?;
        (0..ds.len())
            .into_par_iter()
            .map(|i| {
                let spec = CorruptionSpec {
                    corruption,
                    seed: derive_seed(corrupt_seed, &[i as u64]),
                };
                let img = spec.apply(ds.width, ds.height, ds.image(i))?;
                Ok(EncodedSample {
                    psp: self.encode_one(&img, mode, derive_seed(encode_seed, &[i as u64]))?,
                    label: ds.label(i),
                })
            })
            .collect()
    }
}

/// Clean training encodings for a given epoch.
pub fn encode_training_set(
    cfg: &RunConfig,
    pipe: &Pipeline,
    train: &Dataset,
    epoch: usize,
) -> Result<Vec<EncodedSample>, ExperimentError> {
    let round = if cfg.training.reencode_each_epoch { epoch as u64 } else { 0 };
    pipe.encode_dataset(
        train,
        Corruption::Invert { theta: 0.0 },
        cfg.aggregation.invert,
        derive_seed(cfg.seed, &[ROLE_CORRUPT, u64::MAX]),
        derive_seed(cfg.seed, &[ROLE_ENCODE_TRAIN, round]),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: Metrics,
}

/// Trains a fresh network on clean encodings.
pub fn train_network(
    cfg: &RunConfig,
    train: &Dataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Network, Vec<EpochLog>), ExperimentError> {
    let pipe = Pipeline::from_config(cfg)?;
    let net = Network::new(
        train.n_pixels(),
        cfg.model.hidden,
        dataio::N_CLASSES,
        cfg.compartment_params(),
        derive_seed(cfg.seed, &[ROLE_INIT]),
    );
    let mut trainer = Trainer::new(net, cfg.adam(), cfg.teaching());
    let mut logs = Vec::with_capacity(cfg.training.epochs);
    let mut samples = None;
    for epoch in 0..cfg.training.epochs {
        if samples.is_none() || cfg.training.reencode_each_epoch {
            samples = Some(encode_training_set(cfg, &pipe, train, epoch)?);
        }
        let data = samples.as_deref().expect("encoded above");
        let metrics = trainer.train_epoch(
            data,
            cfg.training.batch_size,
            derive_seed(cfg.seed, &[ROLE_SHUFFLE, epoch as u64]),
        )?;
        let log = EpochLog {
            epoch: epoch + 1,
            train: metrics,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((trainer.net, logs))
}

/// Evaluates the network on the test set corrupted at one grid point.
pub fn evaluate_corrupted(
    cfg: &RunConfig,
    pipe: &Pipeline,
    net: &Network,
    test: &Dataset,
    corruption: Corruption,
    mode: AggregationMode,
) -> Result<Metrics, ExperimentError> {
    if net.n_in() != test.n_pixels() {
        return Err(ExperimentError::ModelShape {
            expected: net.n_in(),
            got: test.n_pixels(),
        });
    }
    let key = corruption.param().to_bits();
    let samples = pipe.encode_dataset(
        test,
        corruption,
        mode,
        derive_seed(cfg.seed, &[ROLE_CORRUPT, corruption.kind() as u64, key]),
        derive_seed(cfg.seed, &[ROLE_ENCODE_TEST, corruption.kind() as u64, key]),
    )?;
    Ok(evaluate(net, &samples, &cfg.teaching())?)
}

/// The grids used in the published tables.
pub fn default_grid(kind: NoiseKind) -> Vec<f64> {
    match kind {
        NoiseKind::Invert => (0..=8).map(|k| k as f64 * PI / 16.0).collect(),
        NoiseKind::Flip | NoiseKind::Awgn => (0..=10).map(|k| k as f64 / 10.0).collect(),
    }
}

/// Parses `a:b:step` (inclusive of `b` up to rounding) or a single value.
/// Values may be written as multiples of `pi`, e.g. `0:pi/2:pi/16`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, ExperimentError> {
    let err = |reason: &str| ExperimentError::Grid {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| parse_number(p.trim()).ok_or_else(|| err(&format!("cannot read {p:?} as a number"))))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [v] => Ok(vec![v]),
        [a, b, step] => {
            if step.is_nan() || step <= 0.0 {
                return Err(err("step must be positive"));
            }
            if b < a {
                return Err(err("end is below start"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            if n > 100_000 {
                return Err(err("too many grid points"));
            }
            Ok((0..=n).map(|k| a + k as f64 * step).collect())
        }
        _ => Err(err("expected a:b:step or a single value")),
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let lower = s.to_ascii_lowercase();
    let (num, den) = match lower.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().ok()?),
        None => (lower.as_str(), 1.0),
    };
    let value = if let Some(coef) = num.strip_suffix("pi") {
        let c = coef.trim_end_matches('*');
        (if c.is_empty() { 1.0 } else { c.parse::<f64>().ok()? }) * PI
    } else {
        num.parse::<f64>().ok()?
    };
    let v = value / den;
    v.is_finite().then_some(v)
}

/// Pixel intensities as seen by the baseline: the blended field of each
/// corrupted image.
pub fn blended_matrix(ds: &Dataset, corruption: Corruption, corrupt_seed: u64) -> Result<Array2<f64>, ExperimentError> {
    let rows = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let spec = CorruptionSpec {
                corruption,
                seed: derive_seed(corrupt_seed, &[i as u64]),
            };
            Ok(spec.apply(ds.width, ds.height, ds.image(i))?.blended().to_vec())
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((ds.len(), ds.n_pixels()), flat).expect("rows have n_pixels entries"))
}

fn labels_of(ds: &Dataset) -> Vec<usize> {
    (0..ds.len()).map(|i| ds.label(i)).collect()
}

pub fn train_baseline(cfg: &RunConfig, train: &Dataset) -> Result<(Mlp, Vec<EpochLog>), ExperimentError> {
    let x = Array2::from_shape_vec((train.len(), train.n_pixels()), train.images.clone()).expect("dataset is rectangular");
    let y = labels_of(train);
    let net = Mlp::new(
        train.n_pixels(),
        cfg.baseline.hidden,
        dataio::N_CLASSES,
        derive_seed(cfg.seed, &[ROLE_INIT, 1]),
    );
    let adam = crate::trainer::AdamConfig {
        lr: cfg.baseline.lr,
        ..cfg.adam()
    };
    let mut t = MlpTrainer::new(net, adam);
    let mut logs = Vec::new();
    for epoch in 0..cfg.baseline.epochs {
        let m = t.train_epoch(
            &x,
            &y,
            cfg.baseline.batch_size,
            derive_seed(cfg.seed, &[ROLE_SHUFFLE, 1, epoch as u64]),
        )?;
        logs.push(EpochLog {
            epoch: epoch + 1,
            train: m,
        });
    }
    Ok((t.net, logs))
}

pub fn evaluate_baseline(cfg: &RunConfig, net: &Mlp, test: &Dataset, corruption: Corruption) -> Result<Metrics, ExperimentError> {
    let key = corruption.param().to_bits();
    let x = blended_matrix(
        test,
        corruption,
        derive_seed(cfg.seed, &[ROLE_CORRUPT, corruption.kind() as u64, key]),
    )?;
    Ok(baseline::evaluate(net, &x, &labels_of(test))?)
}

pub fn record(cfg: &RunConfig, model: &str, corruption: Corruption, m: &Metrics) -> RunRecord {
    RunRecord {
        dataset: cfg.data.dataset.clone(),
        model: model.to_string(),
        noise_kind: corruption.kind().to_string(),
        noise_param: corruption.param(),
        seed: cfg.seed,
        n_samples: m.n_total,
        accuracy: m.accuracy,
    }
}

/// Evaluates the network over a grid; records come back in grid order.
pub fn sweep(
    cfg: &RunConfig,
    net: &Network,
    test: &Dataset,
    kind: NoiseKind,
    grid: &[f64],
) -> Result<Vec<RunRecord>, ExperimentError> {
    let pipe = Pipeline::from_config(cfg)?;
    let mode = cfg.aggregation_for(kind);
    grid.par_iter()
        .map(|&p| {
            let c = kind.with_param(p);
            let m = evaluate_corrupted(cfg, &pipe, net, test, c, mode)?;
            Ok(record(cfg, "qsnn", c, &m))
        })
        .collect()
}

pub fn sweep_baseline(
    cfg: &RunConfig,
    net: &Mlp,
    test: &Dataset,
    kind: NoiseKind,
    grid: &[f64],
) -> Result<Vec<RunRecord>, ExperimentError> {
    grid.par_iter()
        .map(|&p| {
            let c = kind.with_param(p);
            let m = evaluate_baseline(cfg, net, test, c)?;
            Ok(record(cfg, "ann", c, &m))
        })
        .collect()
}
