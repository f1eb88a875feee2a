//! Hybrid SQL corrector: syntax repair, then tool-based and model-based
//! equivalence checking with a fallback to the original query.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{check_results, Database, DbError};
use crate::domain::{OutcomeVerdict, SqlQuery};
use crate::llm::{extract_sql, AgentLlm};
use crate::prompt::Prompts;
use crate::sqltext;

pub const DEFAULT_K_MAX: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxReport {
    pub ok: bool,
    pub server_message: Option<String>,
    pub attempts_used: usize,
}

impl SyntaxReport {
    fn pass(attempts_used: usize) -> Self {
        Self { ok: true, server_message: None, attempts_used }
    }

    fn fail(message: String, attempts_used: usize) -> Self {
        Self { ok: false, server_message: Some(message), attempts_used }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqStatus {
    Equivalent,
    Nonequivalent,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqStage {
    Tool,
    Llm,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub status: EqStatus,
    pub stage: EqStage,
    pub evidence: String,
}

impl EquivalenceVerdict {
    pub fn new(status: EqStatus, stage: EqStage, evidence: impl Into<String>) -> Self {
        Self { status, stage, evidence: evidence.into() }
    }
}

/// A sound equivalence prover. May answer `Unknown` freely.
pub trait ExternalVerifier {
    fn name(&self) -> &str;
    fn check(&self, original: &SqlQuery, rewritten: &SqlQuery, schema: &str) -> EquivalenceVerdict;
}

/// The default verifier: proves nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysUnknown;

impl ExternalVerifier for AlwaysUnknown {
    fn name(&self) -> &str {
        "always-unknown"
    }

    fn check(&self, _: &SqlQuery, _: &SqlQuery, _: &str) -> EquivalenceVerdict {
        EquivalenceVerdict::new(EqStatus::Unknown, EqStage::Tool, "no external verifier configured")
    }
}

/// Runs an external prover as `program [args..] original.sql rewritten.sql
/// schema.sql`. Its last non-empty stdout line must be `EQ`, `NEQ` or
/// `UNKNOWN`; anything else, a crash or a timeout counts as unknown.
#[derive(Debug, Clone)]
pub struct SubprocessVerifier {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl SubprocessVerifier {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self { program: program.into(), args: vec![], timeout: Duration::from_secs(30) }
    }

    fn run(&self, original: &SqlQuery, rewritten: &SqlQuery, schema: &str) -> Result<String, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let files = [("original.sql", original.text()), ("rewritten.sql", rewritten.text()), ("schema.sql", schema)];
        for (name, body) in files {
            std::fs::write(dir.path().join(name), body).map_err(|e| e.to_string())?;
        }
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .args(files.iter().map(|(n, _)| dir.path().join(n)))
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let start = Instant::now();
        loop {
            match child.try_wait().map_err(|e| e.to_string())? {
                Some(_) => break,
                None if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err("verifier timed out".into());
                }
                None => std::thread::sleep(Duration::from_millis(10)),
            }
        }
        let mut out = String::new();
        if let Some(mut s) = child.stdout.take() {
            s.read_to_string(&mut out).map_err(|e| e.to_string())?;
        }
        Ok(out)
    }
}

impl ExternalVerifier for SubprocessVerifier {
    fn name(&self) -> &str {
        self.program.to_str().unwrap_or("external verifier")
    }

    fn check(&self, original: &SqlQuery, rewritten: &SqlQuery, schema: &str) -> EquivalenceVerdict {
        match self.run(original, rewritten, schema) {
            Ok(out) => {
                let last = out.lines().rev().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
                let status = match last {
                    "EQ" => EqStatus::Equivalent,
                    "NEQ" => EqStatus::Nonequivalent,
                    _ => EqStatus::Unknown,
                };
                EquivalenceVerdict::new(status, EqStage::Tool, format!("{}: {last}", self.name()))
            }
            Err(e) => EquivalenceVerdict::new(EqStatus::Unknown, EqStage::Tool, e),
        }
    }
}

/// Whether the server (or, without one, the local grammar) accepts `q`.
/// A statement that parses locally but is not a single read-only query is
/// rejected as well. Connection failures are errors, not syntax failures.
pub fn check_syntax(db: Option<&mut dyn Database>, q: &SqlQuery) -> Result<SyntaxReport, DbError> {
    let body = sqltext::split_hint_block(q.text()).1;
    if sqltext::parse(body).is_ok() && !sqltext::is_read_only_query(q.text()) {
        return Ok(SyntaxReport::fail("only a single read-only query can be rewritten".into(), 0));
    }
    let Some(db) = db else {
        return Ok(match sqltext::check_grammar(body) {
            Ok(()) => SyntaxReport::pass(0),
            Err(m) => SyntaxReport::fail(format!("syntax error: {m}"), 0),
        });
    };
    match db.explain(q) {
        Ok(_) => Ok(SyntaxReport::pass(0)),
        Err(DbError::SyntaxRejected { message, .. }) | Err(DbError::Execution { message, .. }) => {
            Ok(SyntaxReport::fail(message, 0))
        }
        Err(DbError::UnknownTable(t)) => Ok(SyntaxReport::fail(format!("relation \"{t}\" does not exist"), 0)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("query already passes the syntax check")]
    AlreadyValid,
    #[error("no valid repair after {} attempts", attempts.len())]
    RepairFailed { attempts: Vec<String>, last_message: String },
    #[error(transparent)]
    Db(#[from] DbError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repaired {
    pub sql: SqlQuery,
    pub report: SyntaxReport,
    pub attempts: Vec<String>,
}

/// Time and iteration budget of the model-based equivalence loop; whichever
/// runs out first ends it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    #[serde(with = "secs")]
    pub wall: Duration,
    pub max_iterations: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self { wall: Duration::from_secs(60), max_iterations: 5 }
    }
}

impl Budget {
    pub fn zero() -> Self {
        Self { wall: Duration::ZERO, max_iterations: 0 }
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// The query the corrector hands back, with how it was established.
#[derive(Debug, Clone, PartialEq)]
pub struct Verified {
    pub sql: SqlQuery,
    pub verdict: EquivalenceVerdict,
    pub outcome: OutcomeVerdict,
}

impl Verified {
    pub fn is_fallback(&self) -> bool {
        self.outcome == OutcomeVerdict::FallbackOriginal
    }
}

pub struct Corrector<'a> {
    pub verifier: &'a dyn ExternalVerifier,
    pub prompts: &'a Prompts,
    pub budget: Budget,
    pub k_max: usize,
    /// Compare execution outputs before accepting any equivalence claim.
    pub oracle_gate: bool,
}

fn parse_verdict(text: &str) -> EqStatus {
    let upper = text.to_ascii_uppercase();
    let Some(pos) = upper.rfind("VERDICT:") else { return EqStatus::Unknown };
    let rest = upper[pos + 8..].trim_start();
    if rest.starts_with("NOT") || rest.starts_with("NONEQUIVALENT") || rest.starts_with("NON-EQUIVALENT") {
        EqStatus::Nonequivalent
    } else if rest.starts_with("EQUIVALENT") {
        EqStatus::Equivalent
    } else {
        EqStatus::Unknown
    }
}

fn schema_for(db: &mut dyn Database, q: &SqlQuery) -> String {
    let tables = sqltext::referenced_tables(sqltext::split_hint_block(q.text()).1);
    db.schema_ddl(&tables).unwrap_or_default()
}

impl<'a> Corrector<'a> {
    pub fn new(prompts: &'a Prompts) -> Self {
        Self {
            verifier: &AlwaysUnknown,
            prompts,
            budget: Budget::default(),
            k_max: DEFAULT_K_MAX,
            oracle_gate: true,
        }
    }

    /// Feeds the server message back to the model until a variant passes
    /// `check_syntax`, at most `k_max` times.
    pub fn repair_syntax(&self, db: &mut dyn Database, q: &SqlQuery, llm: &AgentLlm) -> Result<Repaired, RepairError> {
        let first = check_syntax(Some(&mut *db), q)?;
        if first.ok {
            return Err(RepairError::AlreadyValid);
        }
        let schema = schema_for(db, q);
        let mut current = q.clone();
        let mut message = first.server_message.unwrap_or_default();
        let mut attempts = Vec::new();
        for attempt in 1..=self.k_max {
            let vars = [("query", current.text()), ("error", message.as_str()), ("schema", schema.as_str())];
            let reply = match llm.ask(self.prompts.messages("repair", &vars)) {
                Ok(c) => c,
                Err(e) => {
                    attempts.push(String::new());
                    message = e.to_string();
                    break;
                }
            };
            let Some(variant) = extract_sql(&reply.answer).into_iter().next() else {
                attempts.push(String::new());
                continue;
            };
            attempts.push(variant.text().to_string());
            let report = check_syntax(Some(&mut *db), &variant)?;
            if report.ok {
                return Ok(Repaired { sql: variant, report: SyntaxReport::pass(attempt), attempts });
            }
            message = report.server_message.unwrap_or_default();
            current = variant;
        }
        Err(RepairError::RepairFailed { attempts, last_message: message })
    }

    fn oracle(&self, db: &mut dyn Database, original: &SqlQuery, candidate: &SqlQuery) -> Result<(), String> {
        if !self.oracle_gate {
            return Ok(());
        }
        let check = check_results(db, original, candidate);
        if check.equal {
            Ok(())
        } else {
            Err(check.reason.unwrap_or_else(|| "outputs differ".into()))
        }
    }

    fn fallback(original: &SqlQuery, stage: EqStage, evidence: String) -> Verified {
        Verified {
            sql: original.clone(),
            verdict: EquivalenceVerdict::new(EqStatus::Unknown, stage, evidence),
            outcome: OutcomeVerdict::FallbackOriginal,
        }
    }

    /// Tool stage, then the model loop, then the original. Every path returns
    /// a query that is safe to emit.
    pub fn verify_equivalence(
        &self,
        db: &mut dyn Database,
        original: &SqlQuery,
        rewritten: &SqlQuery,
        llm: &AgentLlm,
    ) -> Verified {
        let schema = schema_for(db, original);
        let tool = self.verifier.check(original, rewritten, &schema);
        let mut feedback = String::new();
        match tool.status {
            EqStatus::Equivalent => match self.oracle(db, original, rewritten) {
                Ok(()) => {
                    return Verified { sql: rewritten.clone(), verdict: tool, outcome: OutcomeVerdict::VerifiedTool };
                }
                Err(reason) => {
                    tracing::warn!(verifier = self.verifier.name(), %reason, "execution check contradicts verifier");
                    feedback = format!("Executing both queries gave different outputs: {reason}");
                }
            },
            EqStatus::Nonequivalent => {
                feedback = format!("A verifier proved the queries are not equivalent ({}).", tool.evidence);
            }
            EqStatus::Unknown => {}
        }

        let start = Instant::now();
        let mut candidate = rewritten.clone();
        let mut last_evidence = "equivalence not established".to_string();
        let mut iterations = 0;
        while iterations < self.budget.max_iterations && start.elapsed() < self.budget.wall {
            iterations += 1;
            let vars = [
                ("original", original.text()),
                ("candidate", candidate.text()),
                ("schema", schema.as_str()),
                ("feedback", feedback.as_str()),
            ];
            let reply = match llm.ask(self.prompts.messages("equivalence", &vars)) {
                Ok(c) => c,
                Err(e) => {
                    last_evidence = format!("model unavailable: {e}");
                    break;
                }
            };
            match parse_verdict(&reply.answer) {
                EqStatus::Equivalent => match self.oracle(db, original, &candidate) {
                    Ok(()) => {
                        return Verified {
                            sql: candidate,
                            verdict: EquivalenceVerdict::new(EqStatus::Equivalent, EqStage::Llm, reply.answer),
                            outcome: OutcomeVerdict::VerifiedLlm,
                        };
                    }
                    Err(reason) => {
                        last_evidence = format!("execution check rejected the claimed equivalence: {reason}");
                        feedback = format!("Executing both queries gave different outputs: {reason}");
                    }
                },
                status => {
                    feedback.clear();
                    if status == EqStatus::Unknown {
                        continue;
                    }
                    let fixed = extract_sql(&reply.answer)
                        .into_iter()
                        .find(|s| !s.same_text_as(&candidate));
                    if let Some(fixed) = fixed {
                        match check_syntax(Some(&mut *db), &fixed) {
                            Ok(r) if r.ok => candidate = fixed,
                            Ok(r) => feedback = format!("Your corrected query was rejected: {}", r.server_message.unwrap_or_default()),
                            Err(e) => {
                                last_evidence = e.to_string();
                                break;
                            }
                        }
                    }
                }
            }
        }
        let stage = if last_evidence.starts_with("execution check") { EqStage::Oracle } else { EqStage::Llm };
        Self::fallback(original, stage, format!("{last_evidence}; original query returned after {iterations} iteration(s)"))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::db::StubDatabase;
    use crate::domain::AgentRole;
    use crate::llm::{Matcher, ProviderConfig, ScriptRule, ScriptedMock, Transcript};

    fn q(s: &str) -> SqlQuery {
        SqlQuery::new(s).unwrap()
    }

    fn llm(rules: Vec<ScriptRule>) -> AgentLlm {
        AgentLlm::new(Arc::new(ScriptedMock::new(rules)), ProviderConfig::default(), AgentRole::Assistant, Transcript::new())
    }

    struct Fixed(EqStatus);
    impl ExternalVerifier for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn check(&self, _: &SqlQuery, _: &SqlQuery, _: &str) -> EquivalenceVerdict {
            EquivalenceVerdict::new(self.0, EqStage::Tool, "scripted")
        }
    }

    #[test]
    fn syntax_checks() {
        let mut db = StubDatabase::new();
        assert!(check_syntax(Some(&mut db), &q("SELECT 1")).unwrap().ok);
        let bad = check_syntax(Some(&mut db), &q("SELEC 1")).unwrap();
        assert!(!bad.ok && bad.server_message.unwrap().contains("syntax error"));
        assert!(!check_syntax(None, &q("SELECT FROM")).unwrap().ok);
        assert!(!check_syntax(None, &q("DELETE FROM t")).unwrap().ok);
        db.offline = true;
        assert!(check_syntax(Some(&mut db), &q("SELECT 1")).unwrap_err().is_connection());
    }

    #[test]
    fn repair_in_one_attempt() {
        let p = Prompts::builtin();
        let c = Corrector::new(&p);
        let mut db = StubDatabase::new();
        let model = llm(vec![ScriptRule::new(Matcher::contains("ROLE: repair"), ["```sql\nSELECT 1\n```"])]);
        let r = c.repair_syntax(&mut db, &q("SELEC 1"), &model).unwrap();
        assert_eq!(r.sql.text(), "SELECT 1");
        assert_eq!(r.report.attempts_used, 1);
        let prompt = &model.transcript().entries()[0].messages[1].content;
        assert!(prompt.contains("syntax error"));
    }

    #[test]
    fn repair_budget_exhausted() {
        let p = Prompts::builtin();
        let mut c = Corrector::new(&p);
        c.k_max = 2;
        let mut db = StubDatabase::new();
        let model = llm(vec![ScriptRule::new(Matcher::contains("ROLE: repair"), ["```sql\nSELEC 2\n```"]).repeating()]);
        match c.repair_syntax(&mut db, &q("SELEC 1"), &model) {
            Err(RepairError::RepairFailed { attempts, .. }) => assert_eq!(attempts.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn repair_of_valid_query_is_refused() {
        let p = Prompts::builtin();
        let c = Corrector::new(&p);
        let model = llm(vec![]);
        assert!(matches!(
            c.repair_syntax(&mut StubDatabase::new(), &q("SELECT 1"), &model),
            Err(RepairError::AlreadyValid)
        ));
    }

    #[test]
    fn tool_equivalent_short_circuits() {
        let p = Prompts::builtin();
        let mut c = Corrector::new(&p);
        let v = Fixed(EqStatus::Equivalent);
        c.verifier = &v;
        let mut db = StubDatabase::new().with_same_results("SELECT 1", "SELECT 1 + 0");
        let model = llm(vec![]);
        let out = c.verify_equivalence(&mut db, &q("SELECT 1"), &q("SELECT 1 + 0"), &model);
        assert_eq!(out.sql.text(), "SELECT 1 + 0");
        assert_eq!((out.verdict.status, out.verdict.stage), (EqStatus::Equivalent, EqStage::Tool));
        assert!(model.transcript().is_empty());
    }

    #[test]
    fn llm_confirms_after_one_refinement() {
        let p = Prompts::builtin();
        let c = Corrector::new(&p);
        let mut db = StubDatabase::new().with_same_results("SELECT 1", "SELECT 2 - 1");
        let model = llm(vec![ScriptRule::new(
            Matcher::contains("ROLE: equivalence"),
            ["VERDICT: NOT EQUIVALENT\nconstant differs\n```sql\nSELECT 2 - 1\n```", "VERDICT: EQUIVALENT"],
        )]);
        let out = c.verify_equivalence(&mut db, &q("SELECT 1"), &q("SELECT 2"), &model);
        assert_eq!(out.sql.text(), "SELECT 2 - 1");
        assert_eq!((out.verdict.status, out.verdict.stage), (EqStatus::Equivalent, EqStage::Llm));
        assert_eq!(out.outcome, OutcomeVerdict::VerifiedLlm);
    }

    #[test]
    fn zero_budget_returns_original() {
        let p = Prompts::builtin();
        let mut c = Corrector::new(&p);
        c.budget = Budget::zero();
        let model = llm(vec![]);
        let out = c.verify_equivalence(&mut StubDatabase::new(), &q("SELECT 1"), &q("SELECT 2"), &model);
        assert_eq!(out.sql.text(), "SELECT 1");
        assert!(out.is_fallback());
    }

    #[test]
    fn oracle_overrides_lying_model() {
        let p = Prompts::builtin();
        let c = Corrector::new(&p);
        let model = llm(vec![ScriptRule::new(Matcher::contains("ROLE: equivalence"), ["VERDICT: EQUIVALENT"]).repeating()]);
        let out = c.verify_equivalence(&mut StubDatabase::new(), &q("SELECT 1"), &q("SELECT 2"), &model);
        assert_eq!(out.sql.text(), "SELECT 1");
        assert_eq!(out.verdict.stage, EqStage::Oracle);
        assert_eq!(model.transcript().len(), Budget::default().max_iterations);
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("VERDICT: EQUIVALENT"), EqStatus::Equivalent);
        assert_eq!(parse_verdict("verdict: not equivalent"), EqStatus::Nonequivalent);
        assert_eq!(parse_verdict("they look the same"), EqStatus::Unknown);
    }

    #[test]
    fn subprocess_verifier_contract() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("v.sh");
        std::fs::write(&script, "#!/bin/sh\ntest -f \"$3\" || exit 1\necho checking\necho EQ\n").unwrap();
        let v = SubprocessVerifier { program: "sh".into(), args: vec![script.to_string_lossy().into()], timeout: Duration::from_secs(5) };
        assert_eq!(v.check(&q("SELECT 1"), &q("SELECT 1"), "").status, EqStatus::Equivalent);
        let missing = SubprocessVerifier::new("/nonexistent/verifier");
        assert_eq!(missing.check(&q("SELECT 1"), &q("SELECT 1"), "").status, EqStatus::Unknown);
    }
}
