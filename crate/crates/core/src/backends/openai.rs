//! OpenAI-compatible `chat/completions` client.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{debug, warn};

use super::{BackendError, ChatBackend, Conversation, ModelResponse};

/// Jittered exponential backoff for transient failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 1_000,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt + 1`. A server `Retry-After` hint
    /// raises the delay but never past `max_delay_ms`.
    pub fn delay(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        let jittered = (exp as f64 * rand::thread_rng().gen_range(0.5..=1.0)) as u64;
        let hinted = retry_after.map_or(0, |d| d.as_millis() as u64);
        Duration::from_millis(jittered.max(hinted).min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    #[serde(default = "default_path")]
    pub path: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_path() -> String {
    "/chat/completions".to_owned()
}

fn default_timeout() -> u64 {
    120
}

impl OpenAiConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            path: default_path(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn url(&self) -> String {
        format!(
            "{}/{}",
            self.endpoint.trim_end_matches('/'),
            self.path.trim_start_matches('/')
        )
    }
}

pub struct OpenAiBackend {
    client: reqwest::Client,
    url: String,
    model: String,
    token: Option<String>,
    retry: RetryPolicy,
    id: String,
}

enum Failure {
    Retry {
        error: BackendError,
        retry_after: Option<Duration>,
    },
    Fatal(BackendError),
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl OpenAiBackend {
    /// Builds the client; the token is read from `api_key_env` when set.
    /// A missing variable leaves requests unauthenticated, which suits local
    /// gateways and surfaces as [`BackendError::Auth`] elsewhere.
    pub fn new(config: &OpenAiConfig) -> Result<Self, BackendError> {
        let token = config.api_key_env.as_deref().and_then(|var| match std::env::var(var) {
            Ok(value) if !value.is_empty() => Some(value),
            _ => {
                warn!(variable = var, "API token variable is not set");
                None
            }
        });
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| BackendError::Unreachable {
                attempts: 0,
                message: e.to_string(),
            })?;
        let url = config.url();
        Ok(Self {
            client,
            id: format!("openai-compatible:{url}"),
            url,
            model: config.model.clone(),
            token,
            retry: config.retry,
        })
    }

    fn request_body(&self, conversation: &Conversation) -> serde_json::Value {
        let messages: Vec<_> = conversation
            .messages()
            .iter()
            .map(|m| json!({ "role": m.role, "content": m.content }))
            .collect();
        // Each sample stream gets its own seed so seeded endpoints do not
        // return identical samples.
        let seed = conversation
            .decoding
            .seed
            .wrapping_add(u64::from(conversation.sample_index));
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": conversation.decoding.temperature,
            "max_tokens": conversation.decoding.max_tokens,
            "seed": seed,
        })
    }

    async fn attempt(&self, body: &serde_json::Value, attempts: u32) -> Result<String, Failure> {
        let mut request = self.client.post(&self.url).json(body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = match request.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Err(Failure::Retry {
                    error: BackendError::Timeout { attempts },
                    retry_after: None,
                })
            }
            Err(e) => {
                return Err(Failure::Retry {
                    error: BackendError::Unreachable {
                        attempts,
                        message: e.to_string(),
                    },
                    retry_after: None,
                })
            }
        };

        let status = response.status();
        let retry_after = parse_retry_after(response.headers());
        if status.is_success() {
            let parsed: ChatResponse = match response.json().await {
                Ok(p) => p,
                Err(e) if e.is_timeout() => {
                    return Err(Failure::Retry {
                        error: BackendError::Timeout { attempts },
                        retry_after: None,
                    })
                }
                Err(e) => return Err(Failure::Fatal(BackendError::MalformedResponse(e.to_string()))),
            };
            return parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .ok_or_else(|| {
                    Failure::Fatal(BackendError::MalformedResponse(
                        "response has no choices[0].message.content".into(),
                    ))
                });
        }

        let body = response.text().await.unwrap_or_default();
        let body: String = body.chars().take(500).collect();
        match status {
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
                Err(Failure::Fatal(BackendError::Auth {
                    status: status.as_u16(),
                }))
            }
            StatusCode::TOO_MANY_REQUESTS => Err(Failure::Retry {
                error: BackendError::RateLimited { attempts },
                retry_after,
            }),
            s if s.is_server_error() => Err(Failure::Retry {
                error: BackendError::Server {
                    status: s.as_u16(),
                    attempts,
                    body,
                },
                retry_after,
            }),
            s => Err(Failure::Fatal(BackendError::Rejected {
                status: s.as_u16(),
                body,
            })),
        }
    }
}

fn parse_retry_after(headers: &HeaderMap) -> Option<Duration> {
    headers
        .get(RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

#[async_trait]
impl ChatBackend for OpenAiBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn model(&self) -> &str {
        &self.model
    }

    async fn complete(&self, conversation: &Conversation) -> Result<ModelResponse, BackendError> {
        let body = self.request_body(conversation);
        let started = Instant::now();
        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(&body, attempt).await {
                Ok(text) => {
                    return Ok(ModelResponse {
                        text,
                        backend_id: self.id.clone(),
                        latency_ms: started.elapsed().as_millis() as u64,
                        from_cache: false,
                    })
                }
                Err(Failure::Fatal(error)) => return Err(error),
                Err(Failure::Retry { error, retry_after }) => {
                    if attempt >= max_attempts {
                        return Err(error);
                    }
                    let delay = self.retry.delay(attempt - 1, retry_after);
                    debug!(attempt, ?delay, %error, "retrying completion");
                    tokio::time::sleep(delay).await;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_is_capped() {
        let policy = RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 100,
            max_delay_ms: 1_000,
        };
        for attempt in 0..8 {
            let d = policy.delay(attempt, None).as_millis() as u64;
            let ceiling = (100u64 << attempt).min(1_000);
            assert!(d <= ceiling, "attempt {attempt}: {d} > {ceiling}");
            assert!(d >= ceiling / 2, "attempt {attempt}: {d} < {}", ceiling / 2);
        }
        assert_eq!(
            policy.delay(0, Some(Duration::from_secs(60))),
            Duration::from_millis(1_000)
        );
        assert!(policy.delay(0, Some(Duration::from_millis(700))) >= Duration::from_millis(700));
    }

    #[test]
    fn url_joining() {
        let mut c = OpenAiConfig::new("http://localhost:8000/v1/", "m");
        assert_eq!(c.url(), "http://localhost:8000/v1/chat/completions");
        c.path = "chat/completions".into();
        assert_eq!(c.url(), "http://localhost:8000/v1/chat/completions");
    }
}
