//! End-to-end rewrite: the agent loop, then hint selection on its output.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::Rewriter;
use crate::config::{Config, LlmMode};
use crate::corrector::{AlwaysUnknown, ExternalVerifier, SubprocessVerifier};
use crate::db::{Database, DbError};
use crate::domain::{AgentRole, SqlQuery};
use crate::fsm::{FailureKind, FsmError, FsmRun, RewriteSession};
use crate::hints::{analyze_plan, probe, select_hints, HintConfig, HintProbe, Selection, Suggestion};
use crate::kb::{Corpus, KbError};
use crate::llm::{AgentBindings, ChatProvider, HttpChatProvider, LlmError, ScriptedMock, Transcript};
use crate::prompt::Prompts;
use crate::sqltext;

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("mock mode needs a reply script")]
    MissingScript,
    #[error("live mode needs an endpoint")]
    MissingEndpoint,
    #[error("reading script {0}: {1}")]
    Script(String, std::io::Error),
    #[error("loading prompts: {0}")]
    Prompts(std::io::Error),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintStage {
    pub probe: HintProbe,
    pub suggestions: Vec<Suggestion>,
    pub selection: Selection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub input: SqlQuery,
    pub run: FsmRun,
    pub hints: Option<HintStage>,
    /// The rewrite, with hints prepended when any survived.
    pub final_sql: SqlQuery,
}

/// Everything a rewrite needs except the database connection.
pub struct Engine {
    pub llms: AgentBindings,
    pub prompts: Prompts,
    pub corpus: Corpus,
    pub verifier: Box<dyn ExternalVerifier>,
    pub config: Config,
}

/// Builds the chat provider the configuration asks for.
pub fn provider_for(config: &Config) -> Result<Arc<dyn ChatProvider>, SetupError> {
    match config.llm.mode {
        LlmMode::Mock => {
            let path = config.llm.script.as_deref().ok_or(SetupError::MissingScript)?;
            let mock = ScriptedMock::from_file(path).map_err(|e| SetupError::Script(path.display().to_string(), e))?;
            Ok(Arc::new(mock))
        }
        LlmMode::Live => {
            if config.llm.endpoint.is_none() {
                return Err(SetupError::MissingEndpoint);
            }
            let mut p = HttpChatProvider::new()?;
            if let Some(t) = config.llm.token_budget {
                p = p.with_token_budget(t);
            }
            Ok(Arc::new(p))
        }
    }
}

impl Engine {
    pub fn from_config(config: Config) -> Result<Self, SetupError> {
        let provider = provider_for(&config)?;
        Self::with_provider(config, provider)
    }

    pub fn with_provider(config: Config, provider: Arc<dyn ChatProvider>) -> Result<Self, SetupError> {
        let (general, reasoning) = config.llm.provider_configs();
        let llms = AgentBindings::new(provider, reasoning, general, Transcript::new());
        let prompts = match &config.prompts_dir {
            Some(dir) => Prompts::with_dir(dir).map_err(SetupError::Prompts)?,
            None => Prompts::builtin(),
        };
        let corpus = match &config.kb {
            Some(p) => Corpus::load(p)?,
            None => Corpus::fixture(),
        };
        let verifier: Box<dyn ExternalVerifier> = match &config.verifier {
            Some(p) => Box::new(SubprocessVerifier::new(p)),
            None => Box::new(AlwaysUnknown),
        };
        Ok(Self { llms, prompts, corpus, verifier, config })
    }

    pub fn transcript(&self) -> &Transcript {
        self.llms.transcript()
    }

    /// Runs the agent loop only.
    pub fn run_fsm(&self, db: &mut dyn Database, q0: &SqlQuery) -> Result<FsmRun, FsmError> {
        RewriteSession {
            db,
            llms: &self.llms,
            prompts: &self.prompts,
            corpus: &self.corpus,
            verifier: self.verifier.as_ref(),
            config: self.config.fsm,
        }
        .run(q0)
    }

    /// Runs the agent loop and, unless disabled, hint selection.
    pub fn rewrite(&self, db: &mut dyn Database, q0: &SqlQuery, with_hints: bool) -> Result<PipelineOutput, FsmError> {
        let run = self.run_fsm(db, q0)?;
        let rewritten = run.outcome.final_sql.clone();
        let lost_connection = run.failure.as_ref().is_some_and(|f| f.kind == FailureKind::Connection);
        let hints = if with_hints && !lost_connection {
            match self.hint_stage(db, &rewritten) {
                Ok(h) => Some(h),
                Err(e) => {
                    tracing::warn!(error = %e, "hint stage skipped");
                    None
                }
            }
        } else {
            None
        };
        let final_sql = hints.as_ref().map_or_else(|| rewritten.clone(), |h| h.selection.query.clone());
        Ok(PipelineOutput { input: q0.clone(), run, hints, final_sql })
    }

    /// Analyzes the plan of `q` and keeps the hints that survive selection.
    pub fn hint_stage(&self, db: &mut dyn Database, q: &SqlQuery) -> Result<HintStage, DbError> {
        let cfg: &HintConfig = &self.config.hints.analysis;
        let probe = probe(db);
        let explained = db.explain(q)?;
        let stats = db.snapshot_stats(&sqltext::referenced_tables(q.text())).unwrap_or_default();
        let llm = self.llms.decision.for_role(AgentRole::Hints);
        let suggestions = analyze_plan(&explained.plan, &stats, q.text(), Some((&llm, &self.prompts)), cfg);
        let selection = select_hints(&suggestions, q, db, cfg)?;
        Ok(HintStage { probe, suggestions, selection })
    }
}

/// Adapts an engine to the benchmark harness.
pub struct EngineRewriter<'e> {
    pub engine: &'e Engine,
    pub with_hints: bool,
    /// Full pipeline output per benchmarked query, in order.
    pub outputs: Vec<PipelineOutput>,
}

impl<'e> EngineRewriter<'e> {
    pub fn new(engine: &'e Engine, with_hints: bool) -> Self {
        Self { engine, with_hints, outputs: Vec::new() }
    }
}

impl Rewriter for EngineRewriter<'_> {
    fn rewrite(&mut self, q: &SqlQuery, db: &mut dyn Database) -> Result<SqlQuery, String> {
        let out = self.engine.rewrite(db, q, self.with_hints).map_err(|e| e.to_string())?;
        let sql = out.final_sql.clone();
        self.outputs.push(out);
        Ok(sql)
    }
}

/// The structured report written next to a rewrite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewriteReport {
    #[serde(flatten)]
    pub output: PipelineOutput,
    /// Where the LLM transcript was saved, if it was.
    pub transcript: Option<String>,
}

impl RewriteReport {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::db::StubDatabase;
    use crate::llm::{Matcher, ScriptRule};

    const Q0: &str = "SELECT a FROM t WHERE a > 1 AND a > 0";
    const C: &str = "SELECT a FROM t WHERE a > 1";

    fn engine() -> Engine {
        let rules = vec![
            ScriptRule::new(Matcher::contains("ROLE: reasoning"), [format!("Step: drop it\n```sql\n{C}\n```")]).repeating(),
            ScriptRule::new(Matcher::contains("ROLE: enhance"), [format!("```sql\n{C}\n```")]).repeating(),
            ScriptRule::new(Matcher::contains("ROLE: equivalence"), ["VERDICT: EQUIVALENT"]).repeating(),
            ScriptRule::new(Matcher::contains("ROLE: decision"), ["DECISION: ACCEPT"]).repeating(),
            ScriptRule::new(Matcher::contains("ROLE: hints"), ["none"]).repeating(),
        ];
        Engine::with_provider(Config::default(), Arc::new(ScriptedMock::new(rules))).unwrap()
    }

    fn db() -> StubDatabase {
        StubDatabase::new().with_cost(Q0, 100.0).with_cost(C, 40.0).with_same_results(Q0, C).with_table("t", 1000.0)
    }

    #[test]
    fn rewrites_then_hints() {
        let out = engine().rewrite(&mut db(), &SqlQuery::new(Q0).unwrap(), true).unwrap();
        assert_eq!(out.run.outcome.final_sql.text(), C);
        assert!(out.hints.is_some());
        assert_eq!(out.final_sql.text(), C);
    }

    #[test]
    fn no_hints_skips_the_stage() {
        let out = engine().rewrite(&mut db(), &SqlQuery::new(Q0).unwrap(), false).unwrap();
        assert!(out.hints.is_none());
        assert!(!out.final_sql.text().contains("/*+"));
    }

    #[test]
    fn mock_mode_without_script_is_rejected() {
        assert!(matches!(Engine::from_config(Config::default()), Err(SetupError::MissingScript)));
    }
}
