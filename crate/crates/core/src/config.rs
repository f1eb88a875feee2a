//! Run configuration. Values come from a TOML file, then the environment,
//! then command-line flags, each layer overriding the one before.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::RunOptions;
use crate::fsm::FsmConfig;
use crate::hints::HintConfig;
use crate::llm::ProviderConfig;

pub const ENV_DSN: &str = "QUITE_DSN";
pub const ENV_LLM_ENDPOINT: &str = "QUITE_LLM_ENDPOINT";
pub const ENV_LLM_KEY: &str = "QUITE_LLM_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LlmMode {
    /// Replies come from a script file; no network.
    #[default]
    Mock,
    /// An OpenAI-style chat-completions endpoint.
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub mode: LlmMode,
    pub endpoint: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    /// Model for the rewrite, assistant, decision and hint agents.
    pub model: String,
    /// Model for the reasoning agent; falls back to `model`.
    pub reasoning_model: Option<String>,
    pub temperature: f64,
    pub timeout_s: f64,
    pub retries: u32,
    pub token_budget: Option<u64>,
    /// Reply script used in mock mode.
    pub script: Option<PathBuf>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        let p = ProviderConfig::default();
        Self {
            mode: LlmMode::Mock,
            endpoint: None,
            api_key: None,
            model: "gpt-4o".into(),
            reasoning_model: None,
            temperature: p.temperature,
            timeout_s: p.timeout.as_secs_f64(),
            retries: p.retries,
            token_budget: None,
            script: None,
        }
    }
}

impl LlmSettings {
    /// Provider configs for the general agents and the reasoning agent.
    pub fn provider_configs(&self) -> (ProviderConfig, ProviderConfig) {
        let mut general = ProviderConfig::default().with_model(self.model.clone());
        if let Some(e) = &self.endpoint {
            general.endpoint = e.clone();
        }
        general.api_key = self.api_key.clone();
        general.temperature = self.temperature;
        general.timeout = Duration::from_secs_f64(self.timeout_s.max(0.0));
        general.retries = self.retries;
        let reasoning = general.clone().with_model(self.reasoning_model.clone().unwrap_or_else(|| self.model.clone()));
        (general, reasoning)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HintSettings {
    pub enabled: bool,
    #[serde(flatten)]
    pub analysis: HintConfig,
}

impl Default for HintSettings {
    fn default() -> Self {
        Self { enabled: true, analysis: HintConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSettings {
    pub warmups: usize,
    pub runs: usize,
    pub cap_s: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        let r = RunOptions::default();
        Self { warmups: r.warmups, runs: r.runs, cap_s: r.cap.as_secs_f64() }
    }
}

impl BenchSettings {
    pub fn run_options(&self) -> RunOptions {
        RunOptions { warmups: self.warmups, runs: self.runs.max(1), cap: Duration::from_secs_f64(self.cap_s.max(0.001)) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    #[serde(skip_serializing)]
    pub dsn: Option<String>,
    pub llm: LlmSettings,
    pub fsm: FsmConfig,
    pub hints: HintSettings,
    pub bench: BenchSettings,
    /// Knowledge-base JSONL; the bundled corpus when unset.
    pub kb: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    pub prompts_dir: Option<PathBuf>,
    /// External equivalence checker; none by default.
    pub verifier: Option<PathBuf>,
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    /// Overrides file values with whatever the environment sets.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let get = |k| lookup(k).filter(|v: &String| !v.is_empty());
        if let Some(v) = get(ENV_DSN) {
            self.dsn = Some(v);
        }
        if let Some(v) = get(ENV_LLM_ENDPOINT) {
            self.llm.endpoint = Some(v);
        }
        if let Some(v) = get(ENV_LLM_KEY) {
            self.llm.api_key = Some(v);
        }
    }

    /// File (if any), then the process environment.
    pub fn resolve(file: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = r#"
dsn = "host=file"

[llm]
mode = "live"
endpoint = "http://file/v1/chat/completions"
model = "m1"
reasoning_model = "r1"

[fsm]
t_max = 1

[hints]
enabled = false
small_cte_rows = 50

[bench]
runs = 5
"#;

    #[test]
    fn file_values_load() {
        let c = Config::from_toml(FILE, Path::new("x.toml")).unwrap();
        assert_eq!(c.dsn.as_deref(), Some("host=file"));
        assert_eq!(c.llm.mode, LlmMode::Live);
        assert_eq!(c.fsm.t_max, 1);
        assert_eq!(c.fsm.k_max, FsmConfig::default().k_max);
        assert!(!c.hints.enabled);
        assert_eq!(c.hints.analysis.small_cte_rows, 50.0);
        assert_eq!(c.bench.runs, 5);
        assert_eq!(c.bench.warmups, 1);
        let (g, r) = c.llm.provider_configs();
        assert_eq!((g.model_name.as_str(), r.model_name.as_str()), ("m1", "r1"));
    }

    #[test]
    fn env_beats_file() {
        let mut c = Config::from_toml(FILE, Path::new("x.toml")).unwrap();
        c.apply_env(|k| match k {
            ENV_DSN => Some("host=env".into()),
            ENV_LLM_KEY => Some("k".into()),
            ENV_LLM_ENDPOINT => Some(String::new()),
            _ => None,
        });
        assert_eq!(c.dsn.as_deref(), Some("host=env"));
        assert_eq!(c.llm.api_key.as_deref(), Some("k"));
        // Empty variables do not clear file values.
        assert_eq!(c.llm.endpoint.as_deref(), Some("http://file/v1/chat/completions"));
    }

    #[test]
    fn bad_toml_names_the_file() {
        let e = Config::from_toml("[fsm\n", Path::new("bad.toml")).unwrap_err();
        assert!(e.to_string().contains("bad.toml"));
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(Config::from_toml("", Path::new("e.toml")).unwrap(), Config::default());
    }
}
