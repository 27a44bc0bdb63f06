//! JSON experiment configuration, schema version 1.
//!
//! ```json
//! {
//!   "config_version": 1,
//!   "rounds": 50,
//!   "alpha": 0.001,
//!   "hyper": { "lr": 0.05, "local_epochs": 1, "batch_size": 16, "seed": 0 },
//!   "model": { "hidden_dim": 64, "dropout_rate": 0.2 },
//!   "nodes": [ { "id": "nih", "manifest": "data/nih.csv" },
//!              { "id": "ucl", "manifest": "data/ucl.csv" } ],
//!   "test_manifest": "data/holdout.csv",
//!   "extractor": { "id": "gridpool", "config": { "grid": 4 } },
//!   "network": { "node_timeout_secs": 300, "join_timeout_secs": 300,
//!                "connect_attempts": 3, "connect_backoff_ms": 250,
//!                "max_frame_bytes": 67108864 },
//!   "synth": { "feature_dim": 64, "class_separation": 3.0, "seed": 1,
//!              "sites": [ { "site_id": "nih", "class_counts": [84, 94, 51, 71] },
//!                         { "site_id": "ucl", "class_counts": [7, 5, 8, 11] } ],
//!              "holdout": { "site_id": "holdout", "class_counts": [6, 6, 6, 6], "seed": 1001 } }
//! }
//! ```
//!
//! `model`, `test_manifest`, `extractor`, `network` and `synth` are optional.
//! `model.input_dim` may be given for a coordinator that has no data to infer
//! it from. Relative paths are resolved against the directory holding the
//! config file. Run `i` of a multi-run experiment uses seed `hyper.seed + i`
//! for both parameter initialization and local training.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::data::{build_extractor, featurize, load_manifest, DataError, SiteDataset, SiteSpec, SynthSpec, NUM_CLASSES};
use crate::federation::FederationConfig;
use crate::model::{Hyperparameters, ModelSpec};
use crate::transport::{NetworkConfig, DEFAULT_MAX_FRAME};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    pub rounds: usize,
    pub alpha: f64,
    pub hyper: HyperConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub test_manifest: Option<PathBuf>,
    #[serde(default)]
    pub extractor: Option<ExtractorConfig>,
    #[serde(default)]
    pub network: NetworkSettings,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub lr: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub input_dim: Option<usize>,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

fn default_hidden() -> usize {
    ModelSpec::DEFAULT_HIDDEN_DIM
}

fn default_dropout() -> f64 {
    ModelSpec::DEFAULT_DROPOUT
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { input_dim: None, hidden_dim: default_hidden(), dropout_rate: default_dropout() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub id: String,
    #[serde(default)]
    pub config: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSettings {
    pub node_timeout_secs: f64,
    pub join_timeout_secs: f64,
    pub connect_attempts: u32,
    pub connect_backoff_ms: u64,
    pub max_frame_bytes: usize,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        let n = NetworkConfig::default();
        NetworkSettings {
            node_timeout_secs: n.node_timeout.as_secs_f64(),
            join_timeout_secs: n.join_timeout.as_secs_f64(),
            connect_attempts: n.connect_attempts,
            connect_backoff_ms: n.connect_backoff.as_millis() as u64,
            max_frame_bytes: DEFAULT_MAX_FRAME,
        }
    }
}

impl NetworkSettings {
    pub fn to_network_config(&self) -> Result<NetworkConfig, ConfigError> {
        let secs = |v: f64, what: &str| {
            Duration::try_from_secs_f64(v)
                .ok()
                .filter(|d| !d.is_zero())
                .ok_or_else(|| ConfigError::Invalid(format!("network.{what} must be a positive number of seconds, got {v}")))
        };
        if self.connect_attempts == 0 {
            return Err(ConfigError::Invalid("network.connect_attempts must be at least 1".into()));
        }
        Ok(NetworkConfig {
            node_timeout: secs(self.node_timeout_secs, "node_timeout_secs")?,
            join_timeout: secs(self.join_timeout_secs, "join_timeout_secs")?,
            connect_attempts: self.connect_attempts,
            connect_backoff: Duration::from_millis(self.connect_backoff_ms),
            max_frame: self.max_frame_bytes,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub feature_dim: usize,
    pub class_separation: f64,
    pub seed: u64,
    pub sites: Vec<SiteSpec>,
    #[serde(default)]
    pub holdout: Option<HoldoutConfig>,
}

/// A test site drawn separately, with its own seed, so its patients never
/// overlap the training sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutConfig {
    pub site_id: String,
    pub class_counts: Vec<usize>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn training_spec(&self) -> SynthSpec {
        SynthSpec { sites: self.sites.clone(), feature_dim: self.feature_dim, class_separation: self.class_separation, seed: self.seed }
    }

    pub fn holdout_spec(&self) -> Option<SynthSpec> {
        self.holdout.as_ref().map(|h| SynthSpec {
            sites: vec![SiteSpec { site_id: h.site_id.clone(), class_counts: h.class_counts.clone() }],
            seed: h.seed,
            ..self.training_spec()
        })
    }
}

impl ExperimentConfig {
    /// Reads, validates and resolves relative paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Json { path: path.to_path_buf(), source })?;
        cfg.validate()?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for n in &mut cfg.nodes {
            n.manifest = base.join(&n.manifest);
        }
        if let Some(t) = &mut cfg.test_manifest {
            *t = base.join(&*t);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.config_version != CONFIG_VERSION {
            return invalid(format!("config_version {} is not supported (expected {CONFIG_VERSION})", self.config_version));
        }
        if self.nodes.is_empty() {
            return invalid("at least one node is required".into());
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if n.id.is_empty() || n.id.len() > u16::MAX as usize {
                return invalid(format!("node id {:?} must be 1..=65535 bytes", n.id));
            }
            if !ids.insert(n.id.as_str()) {
                return invalid(format!("duplicate node id {:?}", n.id));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return invalid(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        let probe = ModelSpec { input_dim: self.model.input_dim.unwrap_or(1), hidden_dim: self.model.hidden_dim, num_classes: NUM_CLASSES, dropout_rate: self.model.dropout_rate };
        probe.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.hyperparameters(0).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.network.to_network_config()?;
        if let Some(s) = &self.synth {
            if s.sites.iter().flat_map(|x| &x.class_counts).sum::<usize>() == 0 {
                return invalid("synth.sites must contain at least one sample".into());
            }
            if let Some(h) = &s.holdout {
                if h.class_counts.iter().sum::<usize>() == 0 {
                    return invalid("synth.holdout must contain at least one sample".into());
                }
                if s.sites.iter().any(|x| x.site_id == h.site_id) {
                    return invalid(format!("synth.holdout site id {:?} collides with a training site", h.site_id));
                }
            }
        }
        Ok(())
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }

    /// Optimizer settings of run `run`; `reg_weight` is filled in per node.
    pub fn hyperparameters(&self, run: u64) -> Hyperparameters {
        Hyperparameters {
            learning_rate: self.hyper.lr,
            local_epochs: self.hyper.local_epochs,
            batch_size: self.hyper.batch_size,
            reg_weight: 0.0,
            seed: self.hyper.seed.wrapping_add(run),
        }
    }

    pub fn model_spec(&self, input_dim: usize) -> Result<ModelSpec, ConfigError> {
        if let Some(d) = self.model.input_dim {
            if d != input_dim {
                return Err(ConfigError::Invalid(format!("model.input_dim is {d} but the data has {input_dim} features")));
            }
        }
        ModelSpec::new(input_dim, self.model.hidden_dim, NUM_CLASSES, self.model.dropout_rate).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Federation settings of run `run` for data with `input_dim` features.
    pub fn federation_config(&self, input_dim: usize, run: u64) -> Result<FederationConfig, ConfigError> {
        Ok(FederationConfig {
            num_rounds: self.rounds,
            alpha: self.alpha,
            model: self.model_spec(input_dim)?,
            hyper: self.hyperparameters(run),
            seed: self.hyper.seed.wrapping_add(run),
        })
    }

    /// Loads one manifest and turns any images into features with the
    /// configured extractor.
    pub fn load_site(&self, manifest: &Path) -> Result<SiteDataset, ConfigError> {
        let ds = load_manifest(manifest)?;
        load_featurized(ds, self.extractor.as_ref())
    }

    /// Every node's dataset, in config order. Each manifest's site id must
    /// match its node id.
    pub fn load_sites(&self) -> Result<Vec<SiteDataset>, ConfigError> {
        self.nodes
            .iter()
            .map(|n| {
                let ds = self.load_site(&n.manifest)?;
                if ds.site_id() != n.id {
                    return Err(ConfigError::Invalid(format!("{} holds site {:?}, but the node is {:?}", n.manifest.display(), ds.site_id(), n.id)));
                }
                Ok(ds)
            })
            .collect()
    }

    pub fn load_test(&self) -> Result<Option<SiteDataset>, ConfigError> {
        self.test_manifest.as_deref().map(|p| self.load_site(p)).transpose()
    }

    /// Feature dimension shared by all given datasets.
    pub fn common_dim<'a>(datasets: impl IntoIterator<Item = &'a SiteDataset>) -> Result<usize, ConfigError> {
        let mut dim: Option<(usize, &str)> = None;
        for ds in datasets {
            if let Some(d) = ds.feature_dim()? {
                match dim {
                    None => dim = Some((d, ds.site_id())),
                    Some((e, site)) if e != d => {
                        return Err(DataError::FeatureDimMismatch { sample_id: format!("site {} (vs {site})", ds.site_id()), expected: e, actual: d }.into())
                    }
                    _ => {}
                }
            }
        }
        dim.map(|(d, _)| d).ok_or_else(|| ConfigError::Invalid("no samples to infer the feature dimension from".into()))
    }
}

/// Featurizes image payloads; feature payloads pass through.
pub fn load_featurized(ds: SiteDataset, extractor: Option<&ExtractorConfig>) -> Result<SiteDataset, ConfigError> {
    let has_images = ds.records().iter().any(|r| r.features().is_none());
    if !has_images {
        return Ok(ds);
    }
    let ex = extractor.ok_or_else(|| ConfigError::Invalid(format!("site {} contains images but no extractor is configured", ds.site_id())))?;
    let extractor = build_extractor(&ex.id, &ex.config)?;
    Ok(featurize(&ds, extractor.as_ref())?)
}
