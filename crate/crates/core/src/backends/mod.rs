//! Chat-completion backends.
//!
//! Every backend implements [`ChatBackend`]. Wrappers compose: a typical
//! live stack is `CachedBackend<ConcurrencyLimit<OpenAiBackend>>`, so cache
//! hits never take an in-flight permit.

mod cache;
mod limit;
mod openai;
mod scripted;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{DecodingParams, Message, Role};

pub use cache::{CacheMode, CacheRecord, CacheRequest, CacheStats, CachedBackend, ResponseCache};
pub use limit::{ConcurrencyLimit, Instrumented};
pub use openai::{OpenAiBackend, OpenAiConfig, RetryPolicy};
pub use scripted::{Rule, RuleBackend, RuleSet, ScriptedBackend};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("backend unreachable after {attempts} attempts: {message}")]
    Unreachable { attempts: u32, message: String },
    #[error("server error HTTP {status} after {attempts} attempts: {body}")]
    Server { status: u16, attempts: u32, body: String },
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("script exhausted after {calls} calls")]
    ScriptExhausted { calls: usize },
    #[error("no scripted rule matched the conversation")]
    NoRuleMatched,
    #[error("invalid conversation: {0}")]
    InvalidConversation(String),
    #[error("replay-only cache has no entry for key {key}")]
    CacheMiss { key: String },
    #[error("cache i/o: {0}")]
    Cache(String),
}

impl BackendError {
    /// True for errors that indicate the endpoint itself could not be reached.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, BackendError::Unreachable { .. })
    }
}

/// A validated chat request: system message first, then strictly
/// alternating user/assistant turns ending with a user turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    messages: Vec<Message>,
    pub decoding: DecodingParams,
    pub sample_index: u32,
}

impl Conversation {
    pub fn new(
        messages: Vec<Message>,
        decoding: DecodingParams,
        sample_index: u32,
    ) -> Result<Self, BackendError> {
        let Some(first) = messages.first() else {
            return Err(BackendError::InvalidConversation("no messages".into()));
        };
        if first.role != Role::System {
            return Err(BackendError::InvalidConversation(
                "first message must be the system prompt".into(),
            ));
        }
        if messages.len() < 2 {
            return Err(BackendError::InvalidConversation(
                "no user message after the system prompt".into(),
            ));
        }
        for (i, message) in messages.iter().enumerate().skip(1) {
            let expected = if i % 2 == 1 { Role::User } else { Role::Assistant };
            if message.role != expected {
                return Err(BackendError::InvalidConversation(format!(
                    "message {i} has role {:?}, expected {:?}",
                    message.role, expected
                )));
            }
        }
        if messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(BackendError::InvalidConversation(
                "conversation must end with a user message".into(),
            ));
        }
        Ok(Self {
            messages,
            decoding,
            sample_index,
        })
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn system_prompt(&self) -> &str {
        &self.messages[0].content
    }

    pub fn last_user(&self) -> &str {
        &self.messages[self.messages.len() - 1].content
    }

    pub fn into_messages(self) -> Vec<Message> {
        self.messages
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub from_cache: bool,
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    /// Stable identifier of the serving endpoint, part of every cache key.
    fn backend_id(&self) -> &str;

    fn model(&self) -> &str;

    async fn complete(&self, conversation: &Conversation) -> Result<ModelResponse, BackendError>;
}

#[async_trait]
impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn model(&self) -> &str {
        (**self).model()
    }

    async fn complete(&self, conversation: &Conversation) -> Result<ModelResponse, BackendError> {
        (**self).complete(conversation).await
    }
}

#[async_trait]
impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn model(&self) -> &str {
        (**self).model()
    }

    async fn complete(&self, conversation: &Conversation) -> Result<ModelResponse, BackendError> {
        (**self).complete(conversation).await
    }
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    backend_id: &'a str,
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
    seed: u64,
    sample_index: u32,
}

/// Content hash identifying a completion request.
pub fn cache_key(conversation: &Conversation, backend_id: &str, model: &str) -> String {
    let material = KeyMaterial {
        backend_id,
        model,
        messages: conversation.messages(),
        temperature: conversation.decoding.temperature,
        max_tokens: conversation.decoding.max_tokens,
        seed: conversation.decoding.seed,
        sample_index: conversation.sample_index,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(&bytes))
}
