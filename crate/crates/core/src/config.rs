//! Run configuration.
//!
//! A run is described by a TOML document mirroring [`RunConfig`]. Only the
//! dataset path and the provider are required; everything else defaults to the
//! standard evaluation settings (50 samples per layer, 50-token generations,
//! clustering threshold 0.8, equal weights, temperatures 0.6 and 1.0, at least
//! three gold answers per question).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::MIN_FALLBACK_DIM;
use crate::confidence::DEFAULT_K;
use crate::dataset::DEFAULT_MIN_ANSWERS;
use crate::provider::DEFAULT_PROMPT_TEMPLATE;
use crate::scoring::ScoreWeights;
use crate::simgen::SimConfig;
use crate::util::sha256_hex;

pub const DEFAULT_SAMPLES_PER_LAYER: u32 = 50;
pub const DEFAULT_MAX_TOKENS: u32 = 50;
pub const DEFAULT_TAU: f64 = 0.8;
pub const DEFAULT_TEMPERATURES: [f64; 2] = [0.6, 1.0];
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_SIM_LAYERS: usize = 12;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

/// Which layers to evaluate.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawLayers", into = "RawLayers")]
pub enum LayerSelection {
    #[default]
    All,
    Explicit(Vec<u32>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawLayers {
    Keyword(String),
    List(Vec<u32>),
}

impl TryFrom<RawLayers> for LayerSelection {
    type Error = String;
    fn try_from(raw: RawLayers) -> Result<Self, Self::Error> {
        match raw {
            RawLayers::Keyword(k) if k == "all" => Ok(LayerSelection::All),
            RawLayers::Keyword(k) => Err(format!("layers must be \"all\" or a list, got {k:?}")),
            RawLayers::List(l) => Ok(LayerSelection::Explicit(l)),
        }
    }
}

impl From<LayerSelection> for RawLayers {
    fn from(l: LayerSelection) -> Self {
        match l {
            LayerSelection::All => RawLayers::Keyword("all".into()),
            LayerSelection::Explicit(v) => RawLayers::List(v),
        }
    }
}

impl LayerSelection {
    /// Concrete, sorted, de-duplicated layer list for a model with `layer_count` layers.
    pub fn resolve(&self, layer_count: u32) -> Vec<u32> {
        match self {
            LayerSelection::All => (1..=layer_count).collect(),
            LayerSelection::Explicit(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
        }
    }
}

/// Unvalidated weight pair; validation happens in [`RunConfig::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub w_c: f64,
    pub w_h: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        let w = ScoreWeights::default();
        Self { w_c: w.w_c, w_h: w.w_h }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderConfig {
    Sidecar {
        url: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    Replay {
        path: PathBuf,
    },
    Sim {
        /// Layer count for the generated trade-off fixture.
        #[serde(default)]
        num_layers: Option<usize>,
        /// Explicit layer profiles; overrides `num_layers`.
        #[serde(default)]
        config: Option<SimConfig>,
    },
}

fn default_timeout_secs() -> u64 {
    120
}

impl ProviderConfig {
    pub fn sim() -> Self {
        ProviderConfig::Sim {
            num_layers: Some(DEFAULT_SIM_LAYERS),
            config: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbedderConfig {
    /// Delegate to the provider's embed endpoint.
    Provider,
    /// Hashed character 3-grams.
    Fallback {
        #[serde(default = "default_dim")]
        dim: usize,
    },
}

fn default_dim() -> usize {
    crate::cluster::DEFAULT_FALLBACK_DIM
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Fallback { dim: default_dim() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_k")]
    pub k: u32,
}

fn yes() -> bool {
    true
}

fn default_k() -> u32 {
    DEFAULT_K
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            k: DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    #[serde(default = "d_min_answers")]
    pub min_answers: usize,
    #[serde(default)]
    pub sample_n: Option<usize>,
    #[serde(default = "d_samples")]
    pub samples_per_layer: u32,
    #[serde(default)]
    pub layers: LayerSelection,
    #[serde(default = "d_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "d_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default)]
    pub weights: WeightsConfig,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_prompt")]
    pub prompt_template: String,
    #[serde(default)]
    pub confidence: ConfidenceConfig,
    /// Root under which `<run-id>/` directories are created. Not part of the run id.
    #[serde(default = "d_output_dir")]
    pub output_dir: PathBuf,
    /// Generation worker threads. Not part of the run id.
    #[serde(default = "d_workers")]
    pub workers: usize,
}

fn d_min_answers() -> usize {
    DEFAULT_MIN_ANSWERS
}
fn d_samples() -> u32 {
    DEFAULT_SAMPLES_PER_LAYER
}
fn d_temperatures() -> Vec<f64> {
    DEFAULT_TEMPERATURES.to_vec()
}
fn d_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}
fn d_tau() -> f64 {
    DEFAULT_TAU
}
fn d_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn d_prompt() -> String {
    DEFAULT_PROMPT_TEMPLATE.to_string()
}
fn d_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn d_workers() -> usize {
    4
}

impl RunConfig {
    /// Default settings for a dataset and provider.
    pub fn with_defaults(dataset_path: impl Into<PathBuf>, provider: ProviderConfig) -> Self {
        Self {
            dataset_path: dataset_path.into(),
            min_answers: d_min_answers(),
            sample_n: None,
            samples_per_layer: d_samples(),
            layers: LayerSelection::All,
            temperatures: d_temperatures(),
            max_tokens: d_max_tokens(),
            tau: d_tau(),
            weights: WeightsConfig::default(),
            provider,
            embedder: EmbedderConfig::default(),
            epsilon: d_epsilon(),
            seed: 0,
            prompt_template: d_prompt(),
            confidence: ConfidenceConfig::default(),
            output_dir: d_output_dir(),
            workers: d_workers(),
        }
    }

    pub fn from_toml_str(s: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads a config file. Relative dataset, replay and output paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative(base);
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset_path);
        fix(&mut self.output_dir);
        if let ProviderConfig::Replay { path } = &mut self.provider {
            fix(path);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    pub fn weights(&self) -> Result<ScoreWeights, crate::scoring::ScoreError> {
        ScoreWeights::new(self.weights.w_c, self.weights.w_h)
    }

    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.min_answers == 0 {
            v.push("min_answers must be at least 1".into());
        }
        if self.sample_n == Some(0) {
            v.push("sample_n must be at least 1 when set".into());
        }
        if self.samples_per_layer == 0 {
            v.push("samples_per_layer must be at least 1".into());
        }
        if let LayerSelection::Explicit(layers) = &self.layers {
            if layers.is_empty() {
                v.push("layers list must not be empty".into());
            }
            if layers.contains(&0) {
                v.push("layers are numbered from 1".into());
            }
        }
        if self.temperatures.is_empty() {
            v.push("temperatures must not be empty".into());
        }
        for t in &self.temperatures {
            if !(*t > 0.0 && t.is_finite()) {
                v.push(format!("temperature {t} must be positive"));
            }
        }
        let mut seen = self.temperatures.clone();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        if seen.len() != self.temperatures.len() {
            v.push("temperatures must be distinct".into());
        }
        if self.max_tokens == 0 {
            v.push("max_tokens must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            v.push("tau must be in (0,1]".into());
        }
        if self.weights().is_err() {
            v.push(format!(
                "weights must each lie in [0,1] and sum to 1 (w_c={}, w_h={})",
                self.weights.w_c, self.weights.w_h
            ));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            v.push("epsilon must be in [0,1)".into());
        }
        if !self.prompt_template.contains("{question}") {
            v.push("prompt_template must contain {question}".into());
        }
        if self.confidence.k == 0 {
            v.push("confidence.k must be at least 1".into());
        }
        if self.workers == 0 {
            v.push("workers must be at least 1".into());
        }
        if let EmbedderConfig::Fallback { dim } = self.embedder {
            if dim < MIN_FALLBACK_DIM {
                v.push(format!("embedder.dim must be at least {MIN_FALLBACK_DIM}"));
            }
        }
        match &self.provider {
            ProviderConfig::Sidecar { url, .. } => {
                if !(url.starts_with("http://") || url.starts_with("https://")) {
                    v.push(format!("sidecar url {url:?} must start with http:// or https://"));
                }
            }
            ProviderConfig::Replay { path } => {
                if !path.exists() {
                    v.push(format!("replay file {} does not exist", path.display()));
                }
                if self.embedder == EmbedderConfig::Provider {
                    v.push("a replay provider cannot embed; use the fallback embedder".into());
                }
            }
            ProviderConfig::Sim { num_layers, config } => match config {
                Some(c) => {
                    if let Err(e) = c.validate() {
                        v.push(format!("sim config: {e}"));
                    }
                }
                None => {
                    if num_layers.unwrap_or(DEFAULT_SIM_LAYERS) < 4 {
                        v.push("sim num_layers must be at least 4".into());
                    }
                }
            },
        }
        if !self.dataset_path.exists() {
            v.push(format!("dataset file {} does not exist", self.dataset_path.display()));
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// Content hash of every field that affects results.
    pub fn run_id(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        canon.workers = 0;
        let json = serde_json::to_string(&canon).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_string()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.run_id())
    }

    /// Applies the sidecar URL environment override, if set.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(crate::provider::http::SIDECAR_URL_ENV) {
            if let ProviderConfig::Sidecar { url: u, .. } = &mut self.provider {
                *u = url;
            }
        }
    }
}
