//! Run configuration: defaults, named profiles, TOML files and overrides.
//!
//! Layers merge key by key in the order built-in defaults, profile preset,
//! config file, command-line overrides; later layers win.

use crate::corrupt::NoiseKind;
use crate::encoder::{AggregationMode, EncodeConfig, Measurement};
use crate::neuro::CompartmentParams;
use crate::trainer::{AdamConfig, TeachingParams};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Parse(String),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("unknown profile {0:?} (expected desk or paper)")]
    Profile(String),
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 10k/2k subsets, 256 hidden units, 5 epochs.
    Desk,
    /// Full datasets, 500 hidden units, 20 epochs.
    Paper,
}

impl Profile {
    pub fn overlay(self) -> Table {
        let text = match self {
            Profile::Desk => "[data]\ntrain_subset = 10000\ntest_subset = 2000\n[model]\nhidden = 256\n[training]\nepochs = 5\n",
            Profile::Paper => "[data]\ntrain_subset = 0\ntest_subset = 0\n[model]\nhidden = 500\n[training]\nepochs = 20\n",
        };
        text.parse().expect("preset overlays are valid TOML")
    }
}

impl FromStr for Profile {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(ConfigError::Profile(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `mnist` or `fashion`.
    pub dataset: String,
    /// Directory holding `<dataset>/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`.
    pub dir: PathBuf,
    /// Seeded subset sizes; 0 keeps the whole split.
    pub train_subset: usize,
    pub test_subset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    /// Synaptic kernel time constant (ms).
    pub tau: f64,
    #[serde(rename = "tau_L")]
    pub tau_l: f64,
    #[serde(rename = "g_B")]
    pub g_b: f64,
    #[serde(rename = "g_L")]
    pub g_l: f64,
    #[serde(rename = "r_B")]
    pub r_b: f64,
    #[serde(rename = "E_E")]
    pub e_e: f64,
    #[serde(rename = "E_I")]
    pub e_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSection {
    #[serde(rename = "T")]
    pub t_window: f64,
    #[serde(rename = "T_sp")]
    pub t_spike: f64,
    pub dt: f64,
    /// Peak firing rate (Hz), shared by the encoder and the network.
    pub r_max: f64,
    /// 0 selects exact probabilities; otherwise shots per pixel.
    pub shots: u64,
    pub measurement_seed: u64,
    pub phase_median_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Draw fresh spike trains for the training set every epoch.
    pub reencode_each_epoch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationSection {
    pub invert: AggregationMode,
    pub flip: AggregationMode,
    pub awgn: AggregationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub encoding: EncodingSection,
    pub training: TrainingSection,
    pub aggregation: AggregationSection,
    pub baseline: BaselineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection {
                dataset: "mnist".into(),
                dir: PathBuf::from("data"),
                train_subset: 0,
                test_subset: 0,
            },
            model: ModelSection {
                hidden: 500,
                tau: 4.0,
                tau_l: 10.0,
                g_b: 0.6,
                g_l: 0.05,
                r_b: 1.0,
                e_e: 8.0,
                e_i: -8.0,
            },
            encoding: EncodingSection {
                t_window: 50.0,
                t_spike: 20.0,
                dt: 1.0,
                r_max: 250.0,
                shots: 0,
                measurement_seed: 0,
                phase_median_scale: 1.0,
            },
            training: TrainingSection {
                epochs: 20,
                lr: 1e-3,
                batch_size: 1,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                reencode_each_epoch: true,
            },
            aggregation: AggregationSection {
                invert: AggregationMode::PerPixel,
                flip: AggregationMode::Mean,
                awgn: AggregationMode::Median,
            },
            baseline: BaselineSection {
                hidden: 500,
                epochs: 20,
                lr: 1e-3,
                batch_size: 32,
            },
        }
    }
}

/// Recursively overlays `top` onto `base`.
pub fn merge(base: &mut Table, top: &Table) {
    for (k, v) in top {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Sets `a.b.c = value` in a table, creating intermediate tables.
pub fn set_path(table: &mut Table, dotted: &str, value: Value) {
    let mut parts: Vec<&str> = dotted.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("intermediate keys are tables");
    }
    cur.insert(last.to_string(), value);
}

pub fn read_table(path: &Path) -> Result<Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    // A run manifest carries its configuration under [config].
    if let Some(Value::Table(inner)) = table.remove("config") {
        table = inner;
    }
    Ok(table)
}

impl RunConfig {
    /// Resolves the layered configuration. The profile comes from the flag,
    /// else from a top-level `profile` key in the file, else defaults only.
    pub fn resolve(profile: Option<Profile>, file: Option<&Path>, overrides: &Table) -> Result<Self, ConfigError> {
        let mut file_table = match file {
            Some(p) => read_table(p)?,
            None => Table::new(),
        };
        let file_profile = match file_table.remove("profile") {
            Some(Value::String(s)) => Some(s.parse::<Profile>()?),
            Some(other) => return Err(invalid("profile", format!("expected a string, got {other}"))),
            None => None,
        };
        let mut table = Table::try_from(RunConfig::default()).expect("defaults serialize");
        if let Some(p) = profile.or(file_profile) {
            merge(&mut table, &p.overlay());
        }
        merge(&mut table, &file_table);
        merge(&mut table, overrides);
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(profile: Profile) -> Self {
        Self::resolve(Some(profile), None, &Table::new()).expect("presets are valid")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(key, format!("{v} must be positive")))
            }
        };
        if !matches!(self.data.dataset.as_str(), "mnist" | "fashion") {
            return Err(invalid(
                "data.dataset",
                format!("{:?} is not mnist or fashion", self.data.dataset),
            ));
        }
        if self.model.hidden == 0 {
            return Err(invalid("model.hidden", "need at least one hidden unit"));
        }
        positive("model.tau", self.model.tau)?;
        positive("model.tau_L", self.model.tau_l)?;
        positive("model.g_B", self.model.g_b)?;
        positive("model.g_L", self.model.g_l)?;
        positive("model.r_B", self.model.r_b)?;
        if self.model.e_e <= self.model.e_i {
            return Err(invalid("model.E_E", "excitatory reversal must exceed inhibitory"));
        }
        positive("training.lr", self.training.lr)?;
        positive("baseline.lr", self.baseline.lr)?;
        if self.training.batch_size == 0 || self.baseline.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be at least 1"));
        }
        for (key, b) in [
            ("training.beta1", self.training.beta1),
            ("training.beta2", self.training.beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(key, format!("{b} outside [0, 1)")));
            }
        }
        positive("training.eps", self.training.eps)?;
        self.encode_config()
            .validate()
            .map_err(|e| invalid("encoding", e.to_string()))?;
        Ok(())
    }

    pub fn encode_config(&self) -> EncodeConfig {
        let e = &self.encoding;
        EncodeConfig {
            t_window: e.t_window,
            t_spike: e.t_spike,
            r_max_hz: e.r_max,
            dt: e.dt,
            measurement: if e.shots == 0 {
                Measurement::Exact
            } else {
                Measurement::Sampled {
                    shots: e.shots,
                    seed: e.measurement_seed,
                }
            },
            phase_median_scale: e.phase_median_scale,
        }
    }

    /// Network rates are in spikes per ms.
    pub fn compartment_params(&self) -> CompartmentParams {
        CompartmentParams {
            g_b: self.model.g_b,
            g_l: self.model.g_l,
            tau_l: self.model.tau_l,
            r_max: self.encoding.r_max / 1000.0,
        }
    }

    pub fn teaching(&self) -> TeachingParams {
        TeachingParams {
            e_e: self.model.e_e,
            e_i: self.model.e_i,
            r_b: self.model.r_b,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.training.lr,
            beta1: self.training.beta1,
            beta2: self.training.beta2,
            eps: self.training.eps,
        }
    }

    pub fn aggregation_for(&self, kind: NoiseKind) -> AggregationMode {
        match kind {
            NoiseKind::Invert => self.aggregation.invert,
            NoiseKind::Flip => self.aggregation.flip,
            NoiseKind::Awgn => self.aggregation.awgn,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Configuration snapshot plus what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub provenance: Provenance,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub crate_version: String,
    pub seed: u64,
    pub threads: usize,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, threads: usize, outputs: Vec<String>) -> Self {
        Self {
            provenance: Provenance {
                command: command.to_string(),
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                seed: config.seed,
                threads,
                outputs,
            },
            config: config.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), ConfigError> {
        let text = toml::to_string(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
