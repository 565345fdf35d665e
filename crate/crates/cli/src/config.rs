//! Declarative run configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use mpt_core::backends::{CacheMode, OpenAiConfig, RuleSet};
use mpt_core::domain::{DecodingParams, MethodKind, MethodSpec, MethodSpecError, Variant};
use mpt_core::methods::ProtocolOptions;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{what} path does not exist: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("replicates must be at least 1")]
    NoReplicates,
    #[error("concurrency must be at least 1")]
    NoConcurrency,
    #[error("no methods configured")]
    NoMethods,
    #[error("method {label}: {source}")]
    Method {
        label: String,
        source: MethodSpecError,
    },
    #[error("method {index}: {message}")]
    MethodShape { index: usize, message: String },
    #[error("two methods share the label {0}")]
    DuplicateLabel(String),
    #[error("--methods names unknown labels: {0}")]
    UnknownMethods(String),
    #[error("synthetic dataset needs a positive count")]
    EmptySynthetic,
    #[error("the API token variable {0} is not set")]
    MissingToken(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Official BBQ JSONL files (a directory or a single file).
    Bbq { path: PathBuf },
    /// Official StereoSet dev JSON.
    Stereoset { path: PathBuf },
    /// Instances already in the canonical JSONL format.
    Instances { path: PathBuf },
    /// Deterministic generated items, for dry runs and tests.
    Synthetic { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub source: DatasetSource,
    #[serde(default)]
    pub subset_per_category: Option<usize>,
    #[serde(default)]
    pub shuffle_options: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Openai(OpenAiConfig),
    /// Offline content-matching backend.
    Rules(RuleSet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub concurrency: usize,
    /// Defaults to `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub cache_mode: CacheMode,
    pub output_dir: PathBuf,
    pub replicates: u32,
    pub sampling_seed: u64,
    pub decoding_seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            concurrency: 8,
            cache_dir: None,
            cache_mode: CacheMode::ReadWrite,
            output_dir: PathBuf::from("runs/latest"),
            replicates: 1,
            sampling_seed: 0,
            decoding_seed: 0,
        }
    }
}

/// One `[[methods]]` entry. Unset fields take the constructor defaults
/// of the chosen method.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Option<MethodKind>,
    pub variant: Option<Variant>,
    pub rounds: Option<u32>,
    pub include_neutral: Option<bool>,
    pub k: Option<u32>,
    pub agents: Option<u32>,
    pub debate_rounds: Option<u32>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl MethodConfig {
    fn to_spec(&self, index: usize) -> Result<MethodSpec, ConfigError> {
        let shape = |message: &str| ConfigError::MethodShape {
            index,
            message: message.to_owned(),
        };
        let method = self.method.ok_or_else(|| shape("missing `method`"))?;
        let variant = self.variant.unwrap_or(Variant::Standard);
        let rounds = self.rounds.unwrap_or(2);
        let neutral = self.include_neutral.unwrap_or(true);
        let mut spec = match method {
            MethodKind::Direct => MethodSpec::direct(variant),
            MethodKind::SelfConsistency => MethodSpec::self_consistency(variant, self.k.unwrap_or(5)),
            MethodKind::RePrompting => MethodSpec::reprompting(self.variant.unwrap_or(Variant::Debias)),
            MethodKind::Mad => MethodSpec::mad(self.agents.unwrap_or(3), self.debate_rounds.unwrap_or(3)),
            MethodKind::Mpt => MethodSpec::mpt(rounds, neutral),
            MethodKind::MptSelfConsistency => MethodSpec::mpt_sc(rounds, neutral, self.k.unwrap_or(5)),
        };
        if let Some(t) = self.temperature {
            spec.decoding.temperature = t;
        }
        if let Some(m) = self.max_tokens {
            spec.decoding.max_tokens = m;
        }
        spec.validate().map_err(|source| ConfigError::Method {
            label: spec.label(),
            source,
        })?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub backend: BackendConfig,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub protocol: ProtocolOptions,
    pub methods: Vec<MethodConfig>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub methods: Option<Vec<String>>,
    pub replicates: Option<u32>,
    pub concurrency: Option<usize>,
    pub subset_per_category: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// A validated configuration with every path resolved.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub methods: Vec<MethodSpec>,
    pub output_dir: PathBuf,
    pub cache_path: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies overrides, anchors relative paths at `base` and checks every
    /// launch precondition.
    pub fn resolve(mut self, base: &Path, overrides: &Overrides) -> Result<ResolvedConfig, ConfigError> {
        if let Some(r) = overrides.replicates {
            self.run.replicates = r;
        }
        if let Some(c) = overrides.concurrency {
            self.run.concurrency = c;
        }
        if let Some(s) = overrides.subset_per_category {
            self.dataset.subset_per_category = Some(s);
        }
        if let Some(seed) = overrides.seed {
            self.run.sampling_seed = seed;
            self.run.decoding_seed = seed;
        }
        if let Some(dir) = &overrides.output_dir {
            self.run.output_dir = dir.clone();
        }
        if self.run.replicates == 0 {
            return Err(ConfigError::NoReplicates);
        }
        if self.run.concurrency == 0 {
            return Err(ConfigError::NoConcurrency);
        }

        let anchor = |p: &Path| if p.is_absolute() { p.to_owned() } else { base.join(p) };
        match &mut self.dataset.source {
            DatasetSource::Bbq { path } | DatasetSource::Stereoset { path } | DatasetSource::Instances { path } => {
                *path = anchor(path);
                if !path.exists() {
                    return Err(ConfigError::MissingPath {
                        what: "dataset",
                        path: path.clone(),
                    });
                }
            }
            DatasetSource::Synthetic { count } => {
                if *count == 0 {
                    return Err(ConfigError::EmptySynthetic);
                }
            }
        }
        if let BackendConfig::Openai(openai) = &self.backend {
            if let Some(var) = &openai.api_key_env {
                if std::env::var_os(var).is_none() {
                    return Err(ConfigError::MissingToken(var.clone()));
                }
            }
        }

        let mut methods = Vec::new();
        for (i, m) in self.methods.iter().enumerate() {
            let spec = m.to_spec(i)?;
            if methods.iter().any(|s: &MethodSpec| s.label() == spec.label()) {
                return Err(ConfigError::DuplicateLabel(spec.label()));
            }
            methods.push(spec);
        }
        if let Some(wanted) = &overrides.methods {
            let unknown: Vec<&str> = wanted
                .iter()
                .filter(|w| !methods.iter().any(|s| &s.label() == *w))
                .map(String::as_str)
                .collect();
            if !unknown.is_empty() {
                return Err(ConfigError::UnknownMethods(unknown.join(",")));
            }
            methods.retain(|s| wanted.contains(&s.label()));
        }
        if methods.is_empty() {
            return Err(ConfigError::NoMethods);
        }

        let output_dir = anchor(&self.run.output_dir);
        let cache_dir = self
            .run
            .cache_dir
            .as_deref()
            .map(anchor)
            .unwrap_or_else(|| output_dir.join("cache"));
        Ok(ResolvedConfig {
            config: self,
            methods,
            cache_path: cache_dir.join("responses.jsonl"),
            output_dir,
        })
    }
}

impl ResolvedConfig {
    /// Decoding parameters of `spec` for one replicate.
    pub fn decoding_for(&self, spec: &MethodSpec, replicate: u32) -> DecodingParams {
        DecodingParams {
            seed: self.config.run.decoding_seed + u64::from(replicate),
            ..spec.decoding
        }
    }

    pub fn expected_calls(&self, instances: usize) -> u64 {
        let per_replicate: u64 = self.methods.iter().map(MethodSpec::call_budget).sum();
        per_replicate * instances as u64 * u64::from(self.config.run.replicates)
    }
}
