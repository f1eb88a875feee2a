use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    validate_messages, ChatMessage, ChatProvider, Completion, LlmError, ProviderConfig, Role,
    TokenUsage,
};

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    reasoning_content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Blocking client for an OpenAI-style chat-completions endpoint.
pub struct HttpChatProvider {
    client: reqwest::blocking::Client,
    token_budget: Option<u64>,
    tokens_used: AtomicU64,
    backoff: Duration,
}

impl HttpChatProvider {
    pub fn new() -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            token_budget: None,
            tokens_used: AtomicU64::new(0),
            backoff: Duration::from_millis(250),
        })
    }

    /// Fails further calls with `BudgetExceeded` once the reported token
    /// usage of this provider passes `tokens`.
    pub fn with_token_budget(mut self, tokens: u64) -> Self {
        self.token_budget = Some(tokens);
        self
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn tokens_used(&self) -> u64 {
        self.tokens_used.load(Ordering::SeqCst)
    }

    fn attempt(
        &self,
        body: &WireRequest<'_>,
        config: &ProviderConfig,
    ) -> Result<Completion, (bool, LlmError)> {
        let mut req = self
            .client
            .post(&config.endpoint)
            .timeout(config.timeout)
            .json(body);
        if let Some(key) = &config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| (true, LlmError::Transport(e.to_string())))?;
        let status = resp.status();
        if !status.is_success() {
            let transient = status.as_u16() == 429 || status.is_server_error();
            let text = resp.text().unwrap_or_default();
            return Err((
                transient,
                LlmError::Transport(format!("HTTP {status}: {}", text.chars().take(300).collect::<String>())),
            ));
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| (false, LlmError::Transport(format!("bad response body: {e}"))))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| (false, LlmError::Transport("response has no choices".into())))?;
        let content = choice.message.content.unwrap_or_default();
        let mut completion = Completion::from_text(content);
        if completion.thinking.is_none() {
            completion.thinking = choice.message.reasoning_content.filter(|s| !s.is_empty());
        }
        completion.usage = wire.usage.map(|u| TokenUsage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        Ok(completion)
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(
        &self,
        messages: &[ChatMessage],
        config: &ProviderConfig,
    ) -> Result<Completion, LlmError> {
        validate_messages(messages)?;
        if let Some(budget) = self.token_budget {
            let used = self.tokens_used();
            if used >= budget {
                return Err(LlmError::BudgetExceeded(format!(
                    "{used} tokens used of {budget}"
                )));
            }
        }
        let body = WireRequest {
            model: &config.model_name,
            messages: messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        Role::System => "system",
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    },
                    content: &m.content,
                })
                .collect(),
            temperature: config.temperature,
            max_tokens: config.max_output_tokens,
        };
        let mut attempt = 0;
        loop {
            match self.attempt(&body, config) {
                Ok(c) => {
                    if let Some(u) = c.usage {
                        self.tokens_used
                            .fetch_add(u.prompt_tokens + u.completion_tokens, Ordering::SeqCst);
                    }
                    return Ok(c);
                }
                Err((transient, err)) if transient && attempt < config.retries => {
                    tracing::warn!(attempt, error = %err, "retrying chat completion");
                    std::thread::sleep(self.backoff * 2u32.pow(attempt.min(6)));
                    attempt += 1;
                }
                Err((_, err)) => return Err(err),
            }
        }
    }
}
