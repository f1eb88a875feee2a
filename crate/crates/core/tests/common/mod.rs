#![allow(dead_code)]

pub mod oracle;

use std::sync::Arc;

use quite::corrector::AlwaysUnknown;
use quite::db::StubDatabase;
use quite::domain::SqlQuery;
use quite::fsm::{FsmConfig, FsmRun, RewriteSession};
use quite::kb::Corpus;
use quite::llm::{AgentBindings, Matcher, ProviderConfig, ScriptRule, ScriptedMock};
use quite::prompt::Prompts;

pub const Q0: &str = "SELECT a FROM t WHERE a > 1 AND a > 0";
pub const C1: &str = "SELECT a FROM t WHERE a > 1 AND 1 = 1";
pub const C2: &str = "SELECT a FROM t WHERE a > 1";
pub const BROKEN: &str = "SELEC a FROM t WHERE a > 1";

pub fn q(s: &str) -> SqlQuery {
    SqlQuery::new(s).unwrap()
}

pub fn fenced(sql: &str) -> String {
    format!("```sql\n{sql}\n```")
}

pub fn chain_reply(sql: &str) -> String {
    format!("Step: drop the redundant predicate\nScore: 30\n{}", fenced(sql))
}

/// Stub where C1 and C2 are cheaper than Q0 and return the same rows.
pub fn stub() -> StubDatabase {
    StubDatabase::new()
        .with_cost(Q0, 100.0)
        .with_cost(C1, 60.0)
        .with_cost(C2, 40.0)
        .with_same_results(Q0, C1)
        .with_same_results(Q0, C2)
        .with_table("t", 1000.0)
}

/// Rules keyed on the role line of each prompt.
pub struct Script {
    pub reasoning: Vec<String>,
    pub enhance: Vec<String>,
    pub repair: Vec<String>,
    pub equivalence: Vec<String>,
    pub decision: Vec<String>,
}

impl Default for Script {
    fn default() -> Self {
        Self {
            reasoning: vec![chain_reply(C1)],
            enhance: vec![fenced(C2)],
            repair: vec![fenced(BROKEN)],
            equivalence: vec!["VERDICT: EQUIVALENT".into()],
            decision: vec!["OTHER: one predicate fewer\nDECISION: ACCEPT".into()],
        }
    }
}

impl Script {
    pub fn rules(&self) -> Vec<ScriptRule> {
        [
            ("ROLE: reasoning", &self.reasoning),
            ("ROLE: enhance", &self.enhance),
            ("ROLE: repair", &self.repair),
            ("ROLE: equivalence", &self.equivalence),
            ("ROLE: decision", &self.decision),
        ]
        .into_iter()
        .filter(|(_, r)| !r.is_empty())
        .map(|(m, r)| ScriptRule::new(Matcher::contains(m), r.clone()).repeating())
        .collect()
    }

    pub fn bindings(&self) -> AgentBindings {
        AgentBindings::uniform(Arc::new(ScriptedMock::new(self.rules())), ProviderConfig::default())
    }
}

pub fn run_with(script: &Script, db: &mut StubDatabase, config: FsmConfig) -> FsmRun {
    let llms = script.bindings();
    let prompts = Prompts::builtin();
    let corpus = Corpus::fixture();
    let mut session = RewriteSession {
        db,
        llms: &llms,
        prompts: &prompts,
        corpus: &corpus,
        verifier: &AlwaysUnknown,
        config,
    };
    session.run(&q(Q0)).expect("valid input")
}

pub fn run(script: &Script) -> FsmRun {
    run_with(script, &mut stub(), FsmConfig::default())
}

/// A seeded throwaway server. The connection is dropped before the cluster.
pub struct Pg {
    pub db: quite::db::PgDatabase,
    pub cluster: quite::db::EphemeralCluster,
}

/// Starts and seeds a private cluster, or returns `None` (after saying so)
/// when no PostgreSQL binaries are installed.
pub fn pg(scale: quite::fixtures::Scale) -> Option<Pg> {
    if quite::db::find_pg_bin_dir().is_none() {
        eprintln!("skipped: no PostgreSQL binaries found");
        return None;
    }
    let cluster = quite::db::EphemeralCluster::start().expect("cluster starts");
    let mut db = quite::db::PgDatabase::connect_dsn(&cluster.dsn()).expect("connects");
    db.batch(&quite::fixtures::seed_sql(&scale)).expect("seeds");
    Some(Pg { db, cluster })
}
