//! Experiment execution and transcript persistence.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use mpt_core::backends::{
    BackendError, CachedBackend, ChatBackend, ConcurrencyLimit, Instrumented, OpenAiBackend,
    ResponseCache, RuleBackend,
};
use mpt_core::datasets::{save_instances, DatasetError};
use mpt_core::domain::{BiasInstance, Condition, MethodSpec, Prediction, Transcript};
use mpt_core::methods::{MethodError, MethodRunner, ProtocolOptions};
use mpt_core::prompts::template_fingerprint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{BackendConfig, ConfigError, Overrides, ResolvedConfig, RunConfig};
use crate::data::load_dataset;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const RUN_SCHEMA: &str = "mpt-run";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot set up backend: {0}")]
    Backend(BackendError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_owned(),
        source,
    }
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub instance_id: String,
    pub method: String,
    pub replicate: u32,
    pub category: String,
    pub condition: Condition,
    pub final_answer: Prediction,
    pub calls: u64,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub instance_id: String,
    pub method: String,
    pub replicate: u32,
    pub unreachable: bool,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMethod {
    pub label: String,
    pub spec: MethodSpec,
    pub call_budget: u64,
    /// Transcript files relative to the run directory, one per replicate.
    pub transcripts: Vec<String>,
}

/// Everything a report needs to know about how a run was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub schema_version: u32,
    pub tool_version: String,
    pub template_fingerprint: String,
    pub instances_sha256: String,
    pub instance_count: usize,
    pub sampling_seed: u64,
    pub decoding_seed: u64,
    pub replicates: u32,
    pub backend_id: String,
    pub model: String,
    pub protocol: ProtocolOptions,
    pub methods: Vec<ManifestMethod>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self, std::io::Error> {
        let text = fs::read_to_string(run_dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Success,
    PartialFailure,
    BackendUnreachable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub instances: usize,
    pub records: usize,
    pub failures: Vec<FailureRecord>,
    pub expected_calls: u64,
    /// Completions requested by the protocols, cache hits included.
    pub requested_calls: usize,
    /// Completions that reached the underlying backend.
    pub backend_calls: usize,
}

impl RunSummary {
    pub fn status(&self) -> RunStatus {
        if self.failures.is_empty() {
            RunStatus::Success
        } else if self.failures.iter().any(|f| f.unreachable) {
            RunStatus::BackendUnreachable
        } else {
            RunStatus::PartialFailure
        }
    }

    pub fn cache_hits(&self) -> usize {
        self.requested_calls - self.backend_calls
    }

    pub fn describe(&self) -> String {
        let mut s = format!(
            "{} records in {}; {} completions requested ({} from cache, {} sent to backend)",
            self.records,
            self.run_dir.display(),
            self.requested_calls,
            self.cache_hits(),
            self.backend_calls
        );
        if !self.failures.is_empty() {
            s.push_str(&format!("\n{} failed:", self.failures.len()));
            for f in self.failures.iter().take(20) {
                s.push_str(&format!("\n  {} {} rep {}: {}", f.method, f.instance_id, f.replicate, f.error));
            }
            if self.failures.len() > 20 {
                s.push_str(&format!("\n  ... and {} more", self.failures.len() - 20));
            }
        }
        s
    }
}

fn build_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend>, RunError> {
    Ok(match config {
        BackendConfig::Openai(c) => Box::new(OpenAiBackend::new(c).map_err(RunError::Backend)?),
        BackendConfig::Rules(rules) => Box::new(RuleBackend::new(rules.clone())),
    })
}

pub fn transcript_path(label: &str, replicate: u32) -> String {
    format!("transcripts/{label}/rep-{replicate:02}.jsonl")
}

fn sha256_file(path: &Path) -> Result<String, RunError> {
    let bytes = fs::read(path).map_err(io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Loads the config at `config_path`, applies overrides and executes it.
pub async fn cmd_run(config_path: &Path, overrides: &Overrides) -> Result<RunSummary, RunError> {
    let base = config_path.parent().unwrap_or(Path::new("."));
    let resolved = RunConfig::load(config_path)?.resolve(base, overrides)?;
    execute(&resolved).await
}

/// Runs every (method, replicate, instance) triple of a resolved config.
/// Transcript files are rewritten from scratch; completed work is served
/// from the response cache, so reruns resume where a previous run stopped.
pub async fn execute(resolved: &ResolvedConfig) -> Result<RunSummary, RunError> {
    let config = &resolved.config;
    let instances = load_dataset(&config.dataset, config.run.sampling_seed)?;
    let run_dir = &resolved.output_dir;
    fs::create_dir_all(run_dir).map_err(io(run_dir))?;

    let instances_path = run_dir.join(INSTANCES_FILE);
    save_instances(&instances_path, &instances)?;
    let snapshot = run_dir.join(CONFIG_SNAPSHOT);
    fs::write(&snapshot, config.to_toml()).map_err(io(&snapshot))?;

    let cache = Arc::new(ResponseCache::open(&resolved.cache_path).map_err(RunError::Backend)?);
    let network = Arc::new(Instrumented::new(build_backend(&config.backend)?));
    let requested = Arc::new(Instrumented::new(CachedBackend::new(
        network.clone(),
        cache,
        config.run.cache_mode,
    )));
    let backend = ConcurrencyLimit::new(requested.clone(), config.run.concurrency);
    let runner = MethodRunner::with_options(backend, config.protocol.clone());

    let mut manifest = Manifest {
        schema: RUN_SCHEMA.into(),
        schema_version: 1,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        template_fingerprint: template_fingerprint(),
        instances_sha256: sha256_file(&instances_path)?,
        instance_count: instances.len(),
        sampling_seed: config.run.sampling_seed,
        decoding_seed: config.run.decoding_seed,
        replicates: config.run.replicates,
        backend_id: network.backend_id().to_owned(),
        model: network.model().to_owned(),
        protocol: config.protocol.clone(),
        methods: Vec::new(),
    };

    let unreachable = AtomicBool::new(false);
    let mut failures = Vec::new();
    let mut records = 0;
    for spec in &resolved.methods {
        let label = spec.label();
        let mut entry = ManifestMethod {
            label: label.clone(),
            spec: spec.clone(),
            call_budget: spec.call_budget(),
            transcripts: Vec::new(),
        };
        for replicate in 0..config.run.replicates {
            tracing::info!(method = %label, replicate, "running");
            let spec = spec.clone().with_decoding(resolved.decoding_for(spec, replicate));
            let rel = transcript_path(&label, replicate);
            let path = run_dir.join(&rel);
            fs::create_dir_all(path.parent().expect("transcript path has a parent")).map_err(io(&path))?;
            let mut out = BufWriter::new(File::create(&path).map_err(io(&path))?);

            let runner = &runner;
            let spec = &spec;
            let unreachable = &unreachable;
            let mut results = stream::iter(&instances)
                .map(|instance| async move {
                    if unreachable.load(Ordering::SeqCst) {
                        return (instance, Err(None));
                    }
                    let result = runner.run(spec, instance).await;
                    if let Err(MethodError::Backend(e)) = &result {
                        if e.is_unreachable() {
                            unreachable.store(true, Ordering::SeqCst);
                        }
                    }
                    (instance, result.map_err(Some))
                })
                .buffered(config.run.concurrency);
            while let Some((instance, result)) = results.next().await {
                match result {
                    Ok(outcome) => {
                        let record = record_for(instance, &label, replicate, outcome.transcript);
                        serde_json::to_writer(&mut out, &record).expect("records serialize");
                        out.write_all(b"\n").map_err(io(&path))?;
                        records += 1;
                    }
                    Err(error) => failures.push(failure_for(instance, &label, replicate, error)),
                }
            }
            out.flush().map_err(io(&path))?;
            entry.transcripts.push(rel);
        }
        manifest.methods.push(entry);
    }

    let failures_path = run_dir.join(FAILURES_FILE);
    let mut text = String::new();
    for f in &failures {
        text.push_str(&serde_json::to_string(f).expect("failures serialize"));
        text.push('\n');
    }
    fs::write(&failures_path, text).map_err(io(&failures_path))?;
    let manifest_path = run_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(io(&manifest_path))?;

    Ok(RunSummary {
        run_dir: run_dir.clone(),
        instances: instances.len(),
        records,
        failures,
        expected_calls: resolved.expected_calls(instances.len()),
        requested_calls: requested.calls(),
        backend_calls: network.calls(),
    })
}

fn record_for(instance: &BiasInstance, label: &str, replicate: u32, transcript: Transcript) -> TranscriptRecord {
    TranscriptRecord {
        instance_id: instance.id().to_owned(),
        method: label.to_owned(),
        replicate,
        category: instance.category().to_owned(),
        condition: instance.condition(),
        final_answer: transcript.final_answer,
        calls: transcript.call_count,
        transcript,
    }
}

fn failure_for(instance: &BiasInstance, label: &str, replicate: u32, error: Option<MethodError>) -> FailureRecord {
    let (unreachable, error) = match error {
        None => (true, "skipped: backend unreachable".to_owned()),
        Some(MethodError::Backend(e)) => (e.is_unreachable(), e.to_string()),
        Some(e) => (false, e.to_string()),
    };
    FailureRecord {
        instance_id: instance.id().to_owned(),
        method: label.to_owned(),
        replicate,
        unreachable,
        error,
    }
}
