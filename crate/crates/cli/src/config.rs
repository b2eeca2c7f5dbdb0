//! Run configuration: one JSON document describing the whole pipeline.
//!
//! Relative paths are resolved against the config file's directory, so a
//! config can ship next to its fixture data and run from anywhere.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use unifeed_core::embed::{EmbeddingProviderConfig, HttpProviderConfig};
use unifeed_core::{AxisSpec, CutoffScope, CutoffStrategy, Error, Result};

pub const DEFAULT_BLANK_MARKER: &str = "_";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputsConfig,
    #[serde(default)]
    pub unify: UnifyConfig,
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default)]
    pub embed: Option<EmbedConfig>,
    pub emit: EmitConfig,
    #[serde(default)]
    pub evaluate: Option<EvaluateConfig>,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsConfig {
    #[serde(default)]
    pub multilabel: Vec<PathBuf>,
    #[serde(default)]
    pub choice: Vec<PathBuf>,
    #[serde(default = "default_blank_marker")]
    pub blank_marker: String,
}

fn default_blank_marker() -> String {
    DEFAULT_BLANK_MARKER.to_owned()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnifyConfig {
    #[serde(default = "default_strategy")]
    pub strategy: CutoffStrategy,
    #[serde(default = "default_scope")]
    pub cutoff_scope: CutoffScope,
    #[serde(default)]
    pub axes: Vec<AxisSpec>,
    /// When set, also writes the ±1 labeled-example corpus to this path.
    #[serde(default)]
    pub labeled_out: Option<PathBuf>,
}

fn default_strategy() -> CutoffStrategy {
    CutoffStrategy::Median
}

fn default_scope() -> CutoffScope {
    CutoffScope::Corpus
}

impl Default for UnifyConfig {
    fn default() -> Self {
        UnifyConfig {
            strategy: default_strategy(),
            cutoff_scope: default_scope(),
            axes: Vec::new(),
            labeled_out: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    #[serde(default = "default_fraction")]
    pub quality_fraction: f64,
    #[serde(default)]
    pub diversity: Option<DiversityConfig>,
}

fn default_fraction() -> f64 {
    1.0
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            quality_fraction: 1.0,
            diversity: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiversityConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default)]
    pub normalize: bool,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_true")]
    pub preserve_source_ratio: bool,
}

fn default_k() -> usize {
    unifeed_core::select::DEFAULT_K
}

fn default_max_iters() -> usize {
    unifeed_core::select::DEFAULT_MAX_ITERS
}

fn default_tol() -> f64 {
    unifeed_core::select::DEFAULT_TOL
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedConfig {
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub expected_dim: Option<usize>,
    /// Embedding model name; MiniLM-family providers default to 384 dims.
    #[serde(default)]
    pub model: Option<String>,
    /// Cache fetched vectors to this file for offline reruns.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

fn default_batch_size() -> usize {
    32
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_max_retries() -> usize {
    3
}

fn default_in_flight() -> usize {
    1
}

impl EmbedConfig {
    pub fn resolved_expected_dim(&self) -> Option<usize> {
        if self.expected_dim.is_some() {
            return self.expected_dim;
        }
        match &self.model {
            Some(name) if name.to_lowercase().contains("minilm") => Some(384),
            _ => None,
        }
    }

    pub fn provider(&self) -> Result<EmbeddingProviderConfig> {
        match (&self.file, &self.endpoint) {
            (Some(path), None) => Ok(EmbeddingProviderConfig::File(path.clone())),
            (None, Some(endpoint)) => {
                let mut http = HttpProviderConfig::new(endpoint.clone());
                http.batch_size = self.batch_size;
                http.timeout = Duration::from_secs(self.timeout_secs);
                http.max_retries = self.max_retries;
                http.max_in_flight = self.max_in_flight;
                http.expected_dim = self.resolved_expected_dim();
                Ok(EmbeddingProviderConfig::Http(http))
            }
            (Some(_), Some(_)) => Err(Error::config(
                "embed: set either 'file' or 'endpoint', not both",
            )),
            (None, None) => Err(Error::config("embed: set 'file' or 'endpoint'")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitConfig {
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    #[serde(default)]
    pub bias: Option<PathBuf>,
    #[serde(default)]
    pub generative: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// JSONL of `{"id", "vector"}` keyed by exact response text.
    pub embeddings: PathBuf,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    200
}

fn default_lr() -> f64 {
    0.1
}

impl RunConfig {
    /// Loads and validates a config, resolving relative paths against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        self.inputs.multilabel.iter_mut().for_each(resolve);
        self.inputs.choice.iter_mut().for_each(resolve);
        if let Some(p) = &mut self.unify.labeled_out {
            resolve(p);
        }
        if let Some(embed) = &mut self.embed {
            if let Some(p) = &mut embed.file {
                resolve(p);
            }
            if let Some(p) = &mut embed.cache {
                resolve(p);
            }
        }
        resolve(&mut self.emit.out_dir);
        if let Some(eval) = &mut self.evaluate {
            if let Some(p) = &mut eval.bias {
                resolve(p);
            }
            if let Some(p) = &mut eval.generative {
                resolve(p);
            }
        }
        if let Some(probe) = &mut self.probe {
            resolve(&mut probe.embeddings);
        }
    }

    fn validate(&self) -> Result<()> {
        if self.inputs.multilabel.is_empty() && self.inputs.choice.is_empty() {
            return Err(Error::config("inputs: at least one input file is required"));
        }
        if self.inputs.blank_marker.is_empty() {
            return Err(Error::config("inputs.blank_marker must be non-empty"));
        }
        let p = self.select.quality_fraction;
        if !(p.is_finite() && p > 0.0 && p <= 1.0) {
            return Err(Error::config(format!(
                "select.quality_fraction must be in (0, 1], got {p}"
            )));
        }
        if let Some(diversity) = &self.select.diversity {
            if self.embed.is_none() {
                return Err(Error::config("diversity requires embeddings"));
            }
            if diversity.k == 0 {
                return Err(Error::config("select.diversity.k must be >= 1"));
            }
            let f = diversity.fraction;
            if !(f.is_finite() && f > 0.0 && f <= 1.0) {
                return Err(Error::config(format!(
                    "select.diversity.fraction must be in (0, 1], got {f}"
                )));
            }
        }
        if let Some(embed) = &self.embed {
            embed.provider()?;
            if embed.batch_size == 0 {
                return Err(Error::config("embed.batch_size must be >= 1"));
            }
        }
        if let Some(eval) = &self.evaluate {
            if eval.bias.is_none() && eval.generative.is_none() {
                return Err(Error::config(
                    "evaluate: set 'bias' and/or 'generative' input paths",
                ));
            }
        }
        if let Some(probe) = &self.probe {
            if probe.epochs == 0 {
                return Err(Error::config("probe.epochs must be >= 1"));
            }
            if !(probe.lr.is_finite() && probe.lr > 0.0) {
                return Err(Error::config("probe.lr must be positive"));
            }
        }
        if !self.inputs.multilabel.is_empty() && self.unify.axes.is_empty() {
            return Err(Error::config(
                "unify.axes must name at least one axis when multilabel inputs are given",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("config.json");
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn minimal_config_loads_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"{
                "inputs": {"choice": ["choice.jsonl"]},
                "emit": {"out_dir": "out"}
            }"#,
        );
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.inputs.blank_marker, "_");
        assert_eq!(config.select.quality_fraction, 1.0);
        assert!(config.select.diversity.is_none());
        assert_eq!(config.inputs.choice[0], dir.path().join("choice.jsonl"));
        assert_eq!(config.emit.out_dir, dir.path().join("out"));
    }

    #[test]
    fn diversity_without_embeddings_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"{
                "inputs": {"choice": ["choice.jsonl"]},
                "select": {"diversity": {"k": 2, "seed": 1, "fraction": 0.5}},
                "emit": {"out_dir": "out"}
            }"#,
        );
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("diversity requires embeddings"), "{err}");
    }

    #[test]
    fn multilabel_inputs_need_axes() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"{
                "inputs": {"multilabel": ["oasst.jsonl"]},
                "emit": {"out_dir": "out"}
            }"#,
        );
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("unify.axes"), "{err}");
    }

    #[test]
    fn threshold_strategy_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"{
                "inputs": {"multilabel": ["a.jsonl"]},
                "unify": {
                    "strategy": {"threshold": {"delta": 0.5}},
                    "axes": [{"name": "toxicity", "polarity": "lower_is_positive"}]
                },
                "emit": {"out_dir": "out"}
            }"#,
        );
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(
            config.unify.strategy,
            CutoffStrategy::Threshold { delta: 0.5 }
        );
        assert_eq!(config.unify.axes[0].name, "toxicity");
    }

    #[test]
    fn minilm_model_defaults_to_384_dims() {
        let embed = EmbedConfig {
            file: None,
            endpoint: Some("http://localhost:1/embed".into()),
            batch_size: 32,
            timeout_secs: 30,
            max_retries: 3,
            max_in_flight: 1,
            expected_dim: None,
            model: Some("all-MiniLM-L6-v2".into()),
            cache: None,
        };
        assert_eq!(embed.resolved_expected_dim(), Some(384));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"{"inputs": {"choice": ["c.jsonl"]}, "emit": {"out_dir": "o"}, "mystery": 1}"#,
        );
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("mystery"), "{err}");
    }
}
