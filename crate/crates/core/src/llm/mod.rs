//! Chat-completion providers shared by every agent.
//!
//! [`ChatProvider`] is the single seam between the pipeline and a model.
//! [`HttpChatProvider`] talks to a live chat-completions endpoint and
//! [`ScriptedMock`] replays canned responses so whole pipeline runs are
//! deterministic. [`AgentLlm`] binds a provider to one agent role and records
//! every exchange in a shared [`Transcript`].

mod extract;
mod http;
mod mock;

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::extract_sql;
pub use http::HttpChatProvider;
pub use mock::{Matcher, ScriptRule, ScriptedMock};

use crate::domain::AgentRole;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout", with = "secs")]
    pub timeout: Duration,
    /// Retries for transient transport failures (connect errors, 429, 5xx).
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

fn default_max_tokens() -> u32 {
    4096
}

fn default_timeout() -> Duration {
    Duration::from_secs(120)
}

fn default_retries() -> u32 {
    3
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "mock".into(),
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            timeout: default_timeout(),
            retries: default_retries(),
            api_key: None,
        }
    }
}

impl ProviderConfig {
    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model_name = model.into();
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Raw model output plus its split into a reasoning trace and an answer
/// when the model marks the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub thinking: Option<String>,
    pub answer: String,
    pub usage: Option<TokenUsage>,
}

impl Completion {
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        let (thinking, answer) = split_thinking(&text);
        Self {
            thinking,
            answer,
            text,
            usage: None,
        }
    }
}

/// Splits `<think>...</think>` from the rest of the response.
pub fn split_thinking(text: &str) -> (Option<String>, String) {
    if let (Some(start), Some(end)) = (text.find("<think>"), text.find("</think>")) {
        if start < end {
            let thinking = text[start + 7..end].trim().to_string();
            let answer = format!("{}{}", &text[..start], &text[end + 8..])
                .trim()
                .to_string();
            return (Some(thinking), answer);
        }
    }
    (None, text.trim().to_string())
}

pub trait ChatProvider: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        config: &ProviderConfig,
    ) -> Result<Completion, LlmError>;
}

pub(crate) fn validate_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
    if messages.is_empty() {
        return Err(LlmError::InvalidRequest("no messages".into()));
    }
    if let Some(m) = messages.iter().find(|m| m.content.is_empty()) {
        return Err(LlmError::InvalidRequest(format!(
            "empty {:?} message",
            m.role
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub agent: AgentRole,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Append-only log of every prompt and response of a session.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    entries: Arc<Mutex<Vec<TranscriptEntry>>>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, mut entry: TranscriptEntry) {
        let mut entries = self.entries.lock().unwrap();
        entry.seq = entries.len();
        entries.push(entry);
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn calls_by(&self, agent: AgentRole) -> usize {
        self.entries
            .lock()
            .unwrap()
            .iter()
            .filter(|e| e.agent == agent)
            .count()
    }

    /// Writes one JSON object per line.
    pub fn save_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for e in self.entries.lock().unwrap().iter() {
            out.push_str(&serde_json::to_string(e).map_err(std::io::Error::other)?);
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

/// A provider bound to one agent role, model configuration and transcript.
#[derive(Clone)]
pub struct AgentLlm {
    provider: Arc<dyn ChatProvider>,
    config: ProviderConfig,
    role: AgentRole,
    transcript: Transcript,
}

impl AgentLlm {
    pub fn new(
        provider: Arc<dyn ChatProvider>,
        config: ProviderConfig,
        role: AgentRole,
        transcript: Transcript,
    ) -> Self {
        Self {
            provider,
            config,
            role,
            transcript,
        }
    }

    pub fn role(&self) -> AgentRole {
        self.role
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    /// Same provider and transcript, different role.
    pub fn for_role(&self, role: AgentRole) -> Self {
        Self {
            role,
            ..self.clone()
        }
    }

    pub fn ask(&self, messages: Vec<ChatMessage>) -> Result<Completion, LlmError> {
        let result = self.provider.complete(&messages, &self.config);
        self.transcript.record(TranscriptEntry {
            seq: 0,
            agent: self.role,
            model: self.config.model_name.clone(),
            messages,
            response: result.as_ref().ok().map(|c| c.text.clone()),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        if let Ok(c) = &result {
            tracing::debug!(agent = %self.role, chars = c.text.len(), "llm response");
        }
        result
    }
}

/// Per-agent model bindings. The reasoning agent usually runs on a
/// reasoning model while the other agents share a general model.
#[derive(Clone)]
pub struct AgentBindings {
    pub reasoning: AgentLlm,
    pub rewrite: AgentLlm,
    pub assistant: AgentLlm,
    pub decision: AgentLlm,
}

impl AgentBindings {
    pub fn new(
        provider: Arc<dyn ChatProvider>,
        reasoning: ProviderConfig,
        general: ProviderConfig,
        transcript: Transcript,
    ) -> Self {
        let bind = |cfg: &ProviderConfig, role| {
            AgentLlm::new(provider.clone(), cfg.clone(), role, transcript.clone())
        };
        Self {
            reasoning: bind(&reasoning, AgentRole::Reasoning),
            rewrite: bind(&general, AgentRole::Rewrite),
            assistant: bind(&general, AgentRole::Assistant),
            decision: bind(&general, AgentRole::Decision),
        }
    }

    /// Every agent on the same provider and configuration.
    pub fn uniform(provider: Arc<dyn ChatProvider>, config: ProviderConfig) -> Self {
        Self::new(provider, config.clone(), config, Transcript::new())
    }

    pub fn transcript(&self) -> &Transcript {
        self.reasoning.transcript()
    }
}
