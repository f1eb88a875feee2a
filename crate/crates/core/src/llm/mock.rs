use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{validate_messages, ChatMessage, ChatProvider, Completion, LlmError, ProviderConfig};

/// Selects which rule answers a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// The n-th request overall (0-based).
    Position(usize),
    /// Every listed substring occurs somewhere in the request messages.
    Contains(Vec<String>),
}

impl Matcher {
    pub fn contains(s: impl Into<String>) -> Self {
        Matcher::Contains(vec![s.into()])
    }

    pub fn contains_all<I, S>(parts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Matcher::Contains(parts.into_iter().map(Into::into).collect())
    }
}

/// One entry of a script. Responses are handed out in order; with `repeat`
/// the last response keeps answering once the others are used up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub matcher: Matcher,
    pub responses: Vec<String>,
    #[serde(default)]
    pub repeat: bool,
}

impl ScriptRule {
    pub fn new(matcher: Matcher, responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            matcher,
            responses: responses.into_iter().map(Into::into).collect(),
            repeat: false,
        }
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }
}

/// File form of a rule: `{"position": 0, "response": "OK"}` or
/// `{"contains": ["ROLE: decision"], "responses": ["...", "..."], "repeat": true}`.
#[derive(Debug, Deserialize)]
struct RawRule {
    position: Option<usize>,
    contains: Option<OneOrMany>,
    response: Option<String>,
    #[serde(default)]
    responses: Vec<String>,
    #[serde(default)]
    repeat: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Deserialize)]
struct RawScript {
    rules: Vec<RawRule>,
}

/// Deterministic provider that replays a script.
///
/// Resolution per request: a `Position` rule for the current call index wins;
/// otherwise the first `Contains` rule that matches and still has a response
/// answers. A request nobody answers fails with `BudgetExceeded`.
#[derive(Debug)]
pub struct ScriptedMock {
    rules: Vec<ScriptRule>,
    cursor: AtomicUsize,
    used: Mutex<Vec<usize>>,
}

impl ScriptedMock {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        let used = Mutex::new(vec![0; rules.len()]);
        Self {
            rules,
            cursor: AtomicUsize::new(0),
            used,
        }
    }

    /// Script answering call `i` with the `i`-th response.
    pub fn from_positions<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            responses
                .into_iter()
                .enumerate()
                .map(|(i, r)| ScriptRule::new(Matcher::Position(i), [r.into()]))
                .collect(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let raw: RawScript = serde_json::from_str(text)?;
        let rules = raw
            .rules
            .into_iter()
            .map(|r| {
                let matcher = match (r.position, r.contains) {
                    (Some(p), _) => Matcher::Position(p),
                    (None, Some(OneOrMany::One(s))) => Matcher::Contains(vec![s]),
                    (None, Some(OneOrMany::Many(v))) => Matcher::Contains(v),
                    (None, None) => Matcher::Contains(vec![]),
                };
                let mut responses = r.responses;
                if let Some(one) = r.response {
                    responses.insert(0, one);
                }
                ScriptRule {
                    matcher,
                    responses,
                    repeat: r.repeat,
                }
            })
            .collect();
        Ok(Self::new(rules))
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(std::io::Error::other)
    }

    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }

    fn next_response(&self, idx: usize, messages: &[ChatMessage]) -> Option<String> {
        let mut used = self.used.lock().unwrap();
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.matcher == Matcher::Position(idx) && used[i] < rule.responses.len() {
                used[i] += 1;
                return Some(rule.responses[used[i] - 1].clone());
            }
        }
        for (i, rule) in self.rules.iter().enumerate() {
            let Matcher::Contains(parts) = &rule.matcher else {
                continue;
            };
            let hit = parts
                .iter()
                .all(|p| messages.iter().any(|m| m.content.contains(p.as_str())));
            if !hit || rule.responses.is_empty() {
                continue;
            }
            if used[i] < rule.responses.len() {
                used[i] += 1;
                return Some(rule.responses[used[i] - 1].clone());
            }
            if rule.repeat {
                return rule.responses.last().cloned();
            }
        }
        None
    }
}

impl ChatProvider for ScriptedMock {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _config: &ProviderConfig,
    ) -> Result<Completion, LlmError> {
        validate_messages(messages)?;
        let idx = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.next_response(idx, messages)
            .map(Completion::from_text)
            .ok_or_else(|| LlmError::BudgetExceeded(format!("script exhausted at request {idx}")))
    }
}
