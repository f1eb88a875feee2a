//! One rewrite through the state machine with a scripted model and a stub
//! database, so it runs anywhere.

use std::sync::Arc;

use quite::corrector::AlwaysUnknown;
use quite::db::StubDatabase;
use quite::domain::SqlQuery;
use quite::fsm::{FsmConfig, RewriteSession};
use quite::kb::Corpus;
use quite::llm::{AgentBindings, Matcher, ProviderConfig, ScriptRule, ScriptedMock};
use quite::prompt::Prompts;

const ORIGINAL: &str = "SELECT a FROM t WHERE a > 1 AND a > 0";
const FIRST: &str = "SELECT a FROM t WHERE a > 1 AND 1 = 1";
const SIMPLER: &str = "SELECT a FROM t WHERE a > 1";

fn main() {
    let mut db = StubDatabase::new()
        .with_cost(ORIGINAL, 100.0)
        .with_cost(FIRST, 60.0)
        .with_cost(SIMPLER, 40.0)
        .with_same_results(ORIGINAL, FIRST)
        .with_same_results(ORIGINAL, SIMPLER)
        .with_table("t", 1000.0);

    let fenced = |sql: &str| format!("```sql\n{sql}\n```");
    let mock = ScriptedMock::new(vec![
        ScriptRule::new(Matcher::contains("ROLE: reasoning"), [format!("Step: a > 1 implies a > 0\nScore: 30\n{}", fenced(FIRST))]),
        ScriptRule::new(Matcher::contains("ROLE: enhance"), [fenced(SIMPLER)]),
        ScriptRule::new(Matcher::contains("ROLE: equivalence"), ["VERDICT: EQUIVALENT"]),
        ScriptRule::new(Matcher::contains("ROLE: decision"), ["OTHER: one predicate fewer\nDECISION: ACCEPT"]),
    ]);
    let llms = AgentBindings::uniform(Arc::new(mock), ProviderConfig::default());
    let prompts = Prompts::builtin();
    let corpus = Corpus::fixture();

    let run = RewriteSession { db: &mut db, llms: &llms, prompts: &prompts, corpus: &corpus, verifier: &AlwaysUnknown, config: FsmConfig::default() }
        .run(&SqlQuery::new(ORIGINAL).unwrap())
        .expect("a read-only query");

    for s in &run.trace.steps {
        println!("{:?} -> {:?} ({:?})", s.from, s.to, s.cause);
    }
    println!("final: {}", run.outcome.final_sql.text());
    println!("{}", serde_json::to_string_pretty(&run.outcome.report).unwrap());
}
