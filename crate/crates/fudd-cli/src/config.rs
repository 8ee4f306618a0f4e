//! Run configuration. One TOML file describes a run; command-line flags
//! override individual fields, and the API key comes from the environment
//! (flags > env > file, secrets never in the file).

use std::path::{Path, PathBuf};
use std::time::Duration;

use fudd_core::diffgen::SimilarityMode;
use fudd_core::gateway::{GenerationParams, RetryPolicy};
use serde::Deserialize;
use thiserror::Error;

pub const API_KEY_ENV: &str = "FUDD_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("backend kind {0:?} needs {1}")]
    MissingBackendField(String, &'static str),
    #[error("unknown backend kind {0:?} (expected \"synthetic\" or \"openai\")")]
    UnknownBackend(String),
    #[error("unknown embedder kind {0:?} (expected \"hash\" or \"matrix\")")]
    UnknownEmbedder(String),
    #[error("embedder kind \"matrix\" needs a path")]
    MissingEmbedderPath,
    #[error("no API key: pass --api-key or set {API_KEY_ENV}")]
    MissingApiKey,
    #[error("invalid generation parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub embedder: Embedder,
    #[serde(default)]
    pub experiment: Experiment,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub manifest: PathBuf,
    pub cache_dir: Option<PathBuf>,
    /// Class-embedding table file, written by embed-classes.
    pub class_embeddings: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub plot_data: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub prefixes: Option<PathBuf>,
    pub pair_examples: Option<PathBuf>,
    pub naive_examples: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Backend {
    pub kind: String,
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub retry_max_attempts: u32,
    pub retry_base_delay_ms: u64,
    pub retry_factor: f64,
}

impl Default for Backend {
    fn default() -> Self {
        Self {
            kind: "synthetic".into(),
            endpoint: None,
            model: "fixture".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            retry_max_attempts: 3,
            retry_base_delay_ms: 500,
            retry_factor: 2.0,
        }
    }
}

impl Backend {
    pub fn params(&self) -> Result<GenerationParams, ConfigError> {
        GenerationParams::new(&self.model, self.temperature, self.max_output_tokens)
            .map_err(|e| ConfigError::BadParams(e.to_string()))
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy::new(
            self.retry_max_attempts,
            Duration::from_millis(self.retry_base_delay_ms),
            self.retry_factor,
        )
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Embedder {
    pub kind: String,
    pub dim: usize,
    pub seed: u64,
    pub path: Option<PathBuf>,
}

impl Default for Embedder {
    fn default() -> Self {
        Self { kind: "hash".into(), dim: 64, seed: 0, path: None }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub method: String,
    pub k: usize,
    pub augment: bool,
    pub mix_base: bool,
    pub similarity_mode: String,
    pub parallelism: usize,
    pub skip_failures: bool,
    /// Description source for embed-classes.
    pub source: String,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            method: "fudd".into(),
            k: 5,
            augment: false,
            mix_base: false,
            similarity_mode: "strict".into(),
            parallelism: 1,
            skip_failures: false,
            source: "single_template".into(),
        }
    }
}

impl Experiment {
    pub fn similarity(&self) -> Result<SimilarityMode, String> {
        match self.similarity_mode.as_str() {
            "strict" => Ok(SimilarityMode::Strict),
            "relaxed" => Ok(SimilarityMode::Relaxed),
            other => Err(format!("unknown similarity_mode {other:?}")),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        // relative paths resolve against the config file's directory
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            Some(&mut config.paths.manifest),
            config.paths.cache_dir.as_mut(),
            config.paths.class_embeddings.as_mut(),
            config.paths.report.as_mut(),
            config.paths.plot_data.as_mut(),
            config.paths.templates.as_mut(),
            config.paths.prefixes.as_mut(),
            config.paths.pair_examples.as_mut(),
            config.paths.naive_examples.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        if let Some(p) = config.embedder.path.as_mut() {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        Ok(config)
    }
}
