//! Deterministic backends for tests and offline runs.

use std::collections::VecDeque;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, Conversation, ModelResponse};

/// Replies with a fixed script, one entry per call, in call order.
#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    state: Mutex<ScriptState>,
}

#[derive(Debug, Default)]
struct ScriptState {
    remaining: VecDeque<String>,
    seen: Vec<Conversation>,
}

impl ScriptedBackend {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            id: "scripted".to_owned(),
            state: Mutex::new(ScriptState {
                remaining: script.into_iter().map(Into::into).collect(),
                seen: Vec::new(),
            }),
        }
    }

    /// Every conversation received so far, in call order.
    pub fn conversations(&self) -> Vec<Conversation> {
        self.state.lock().unwrap().seen.clone()
    }

    pub fn calls(&self) -> usize {
        self.state.lock().unwrap().seen.len()
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap().remaining.len()
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn model(&self) -> &str {
        "script"
    }

    async fn complete(&self, conversation: &Conversation) -> Result<ModelResponse, BackendError> {
        let mut state = self.state.lock().unwrap();
        let text = state
            .remaining
            .pop_front()
            .ok_or(BackendError::ScriptExhausted {
                calls: state.seen.len(),
            })?;
        state.seen.push(conversation.clone());
        Ok(ModelResponse {
            text,
            backend_id: self.id.clone(),
            latency_ms: 0,
            from_cache: false,
        })
    }
}

/// One content-matching rule. All present conditions must hold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rule {
    /// Substrings that must all occur somewhere in the conversation.
    pub contains: Vec<String>,
    pub system_contains: Option<String>,
    pub last_user_contains: Option<String>,
    /// Matches only persona-free (`true`) or persona (`false`) system prompts.
    pub standard_system: Option<bool>,
    pub respond: String,
}

impl Rule {
    fn matches(&self, conversation: &Conversation, standard_system: &str) -> bool {
        if !self.contains.is_empty() {
            let text = conversation
                .messages()
                .iter()
                .map(|m| m.content.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            if !self.contains.iter().all(|needle| text.contains(needle.as_str())) {
                return false;
            }
        }
        if let Some(needle) = &self.system_contains {
            if !conversation.system_prompt().contains(needle.as_str()) {
                return false;
            }
        }
        if let Some(needle) = &self.last_user_contains {
            if !conversation.last_user().contains(needle.as_str()) {
                return false;
            }
        }
        if let Some(want) = self.standard_system {
            if (conversation.system_prompt() == standard_system) != want {
                return false;
            }
        }
        true
    }
}

/// Ordered rules plus an optional fallback reply; serializable so run
/// configurations can describe an offline backend.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    pub default: Option<String>,
}

/// Replies by matching conversation content against rules (first match
/// wins). Stateless, so replies do not depend on call order or scheduling.
#[derive(Debug)]
pub struct RuleBackend {
    id: String,
    rules: RuleSet,
    standard_system: String,
}

impl RuleBackend {
    pub fn new(rules: RuleSet) -> Self {
        Self {
            id: "rules".to_owned(),
            rules,
            standard_system: crate::prompts::render_system(&crate::domain::Persona::none())
                .expect("standard system prompt renders"),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

#[async_trait]
impl ChatBackend for RuleBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn model(&self) -> &str {
        "rules"
    }

    async fn complete(&self, conversation: &Conversation) -> Result<ModelResponse, BackendError> {
        let text = self
            .rules
            .rules
            .iter()
            .find(|rule| rule.matches(conversation, &self.standard_system))
            .map(|rule| rule.respond.clone())
            .or_else(|| self.rules.default.clone())
            .ok_or(BackendError::NoRuleMatched)?;
        Ok(ModelResponse {
            text,
            backend_id: self.id.clone(),
            latency_ms: 0,
            from_cache: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DecodingParams, Message};

    fn conv(system: &str, user: &str) -> Conversation {
        Conversation::new(
            vec![Message::system(system), Message::user(user)],
            DecodingParams::greedy(),
            0,
        )
        .unwrap()
    }

    #[tokio::test]
    async fn script_is_consumed_in_order() {
        let backend = ScriptedBackend::new(["a2"]);
        let r = backend.complete(&conv("s", "q")).await.unwrap();
        assert_eq!(r.text, "a2");
        assert!(!r.from_cache);
        assert_eq!(
            backend.complete(&conv("s", "q")).await,
            Err(BackendError::ScriptExhausted { calls: 1 })
        );
    }

    #[tokio::test]
    async fn rules_match_first() {
        let standard = crate::prompts::render_system(&crate::domain::Persona::none()).unwrap();
        let backend = RuleBackend::new(RuleSet {
            rules: vec![
                Rule {
                    standard_system: Some(true),
                    last_user_contains: Some("review".into()),
                    respond: "judge".into(),
                    ..Rule::default()
                },
                Rule {
                    contains: vec!["grandson".into()],
                    respond: "a1".into(),
                    ..Rule::default()
                },
            ],
            default: None,
        });
        let r = backend.complete(&conv(&standard, "please review")).await.unwrap();
        assert_eq!(r.text, "judge");
        let r = backend.complete(&conv("persona", "please review grandson")).await.unwrap();
        assert_eq!(r.text, "a1");
        assert_eq!(
            backend.complete(&conv("persona", "nothing")).await,
            Err(BackendError::NoRuleMatched)
        );
    }
}
