//! Append-only on-disk response cache and the record/replay wrapper.
//!
//! The file holds one JSON object per line:
//! `{key, model, request, response_text, timestamp}`. When a key appears
//! more than once the last line wins.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{cache_key, BackendError, ChatBackend, Conversation, ModelResponse};
use crate::domain::Message;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRequest {
    pub backend_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    pub sample_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub model: String,
    pub request: CacheRequest,
    pub response_text: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub lines: usize,
    pub entries: usize,
    pub malformed_lines: usize,
    pub bytes: u64,
}

pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, CacheRecord>>,
    writer: tokio::sync::Mutex<File>,
    key_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    lines: Mutex<usize>,
    malformed: usize,
}

fn io_err(path: &Path, e: std::io::Error) -> BackendError {
    BackendError::Cache(format!("{}: {e}", path.display()))
}

fn read_records(path: &Path) -> Result<(Vec<CacheRecord>, usize), BackendError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_err(path, e)),
    };
    let mut records = Vec::new();
    let mut malformed = 0;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CacheRecord>(&line) {
            Ok(record) => records.push(record),
            Err(e) => {
                warn!(path = %path.display(), line = n + 1, error = %e, "skipping malformed cache line");
                malformed += 1;
            }
        }
    }
    Ok((records, malformed))
}

impl ResponseCache {
    /// Opens (creating if needed) the cache file at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let (records, malformed) = read_records(&path)?;
        let lines = records.len();
        let entries = records.into_iter().map(|r| (r.key.clone(), r)).collect();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        Ok(Self {
            path,
            entries: RwLock::new(entries),
            writer: tokio::sync::Mutex::new(file),
            key_locks: Mutex::new(HashMap::new()),
            lines: Mutex::new(lines),
            malformed,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key_lock(&self, key: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.key_locks
            .lock()
            .unwrap()
            .entry(key.to_owned())
            .or_default()
            .clone()
    }

    pub async fn insert(&self, record: CacheRecord) -> Result<(), BackendError> {
        let mut line = serde_json::to_string(&record)
            .map_err(|e| BackendError::Cache(e.to_string()))?;
        line.push('\n');
        {
            let mut file = self.writer.lock().await;
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| io_err(&self.path, e))?;
        }
        *self.lines.lock().unwrap() += 1;
        self.entries.write().unwrap().insert(record.key.clone(), record);
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            lines: *self.lines.lock().unwrap(),
            entries: self.len(),
            malformed_lines: self.malformed,
            bytes: fs::metadata(&self.path).map(|m| m.len()).unwrap_or(0),
        }
    }

    /// Rewrites the file with one line per key (last write wins), dropping
    /// malformed lines. Keys keep the order of their first appearance.
    /// Returns the stats after compaction.
    pub fn compact(path: &Path) -> Result<CacheStats, BackendError> {
        let (records, _) = read_records(path)?;
        let mut order: Vec<String> = Vec::new();
        let mut latest: HashMap<String, CacheRecord> = HashMap::new();
        for record in records {
            if !latest.contains_key(&record.key) {
                order.push(record.key.clone());
            }
            latest.insert(record.key.clone(), record);
        }
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
            for key in &order {
                let line = serde_json::to_string(&latest[key])
                    .map_err(|e| BackendError::Cache(e.to_string()))?;
                writeln!(out, "{line}").map_err(|e| io_err(&tmp, e))?;
            }
            out.flush().map_err(|e| io_err(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
        Ok(CacheStats {
            lines: order.len(),
            entries: order.len(),
            malformed_lines: 0,
            bytes: fs::metadata(path).map(|m| m.len()).unwrap_or(0),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Serve hits, forward misses and record them.
    #[default]
    ReadWrite,
    /// Serve hits; a miss is an error and nothing is forwarded.
    ReplayOnly,
}

pub struct CachedBackend<B> {
    inner: B,
    cache: Arc<ResponseCache>,
    mode: CacheMode,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: Arc<ResponseCache>, mode: CacheMode) -> Self {
        Self { inner, cache, mode }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn hit(&self, record: CacheRecord) -> ModelResponse {
        ModelResponse {
            text: record.response_text,
            backend_id: self.inner.backend_id().to_owned(),
            latency_ms: 0,
            from_cache: true,
        }
    }
}

#[async_trait]
impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    async fn complete(&self, conversation: &Conversation) -> Result<ModelResponse, BackendError> {
        let key = cache_key(conversation, self.inner.backend_id(), self.inner.model());
        if let Some(record) = self.cache.get(&key) {
            return Ok(self.hit(record));
        }
        // Concurrent identical requests wait here and then hit the cache.
        let lock = self.cache.key_lock(&key);
        let _guard = lock.lock().await;
        if let Some(record) = self.cache.get(&key) {
            return Ok(self.hit(record));
        }
        if self.mode == CacheMode::ReplayOnly {
            return Err(BackendError::CacheMiss { key });
        }
        let response = self.inner.complete(conversation).await?;
        self.cache
            .insert(CacheRecord {
                key,
                model: self.inner.model().to_owned(),
                request: CacheRequest {
                    backend_id: self.inner.backend_id().to_owned(),
                    messages: conversation.messages().to_vec(),
                    temperature: conversation.decoding.temperature,
                    max_tokens: conversation.decoding.max_tokens,
                    seed: conversation.decoding.seed,
                    sample_index: conversation.sample_index,
                },
                response_text: response.text.clone(),
                timestamp: chrono::Utc::now().to_rfc3339(),
            })
            .await?;
        Ok(response)
    }
}
