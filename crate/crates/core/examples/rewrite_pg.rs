//! The full pipeline (agents plus hints) on a throwaway local PostgreSQL
//! cluster seeded with the bundled schema. Needs PostgreSQL binaries.

use std::sync::Arc;

use quite::config::Config;
use quite::db::{find_pg_bin_dir, EphemeralCluster, PgDatabase};
use quite::domain::SqlQuery;
use quite::fixtures::{seed_sql, Scale, EXAMPLE1_ORIGINAL, EXAMPLE1_REWRITTEN};
use quite::llm::{Matcher, ScriptRule, ScriptedMock};
use quite::pipeline::Engine;

fn main() -> anyhow::Result<()> {
    if find_pg_bin_dir().is_none() {
        eprintln!("no PostgreSQL binaries found");
        return Ok(());
    }
    let cluster = EphemeralCluster::start()?;
    let mut db = PgDatabase::connect_dsn(&cluster.dsn())?;
    db.batch(&seed_sql(&Scale::tiny()))?;

    let fenced = format!("```sql\n{EXAMPLE1_REWRITTEN}\n```");
    let mock = ScriptedMock::new(vec![
        ScriptRule::new(Matcher::contains("ROLE: reasoning"), [format!("Step: aggregate per product once\nScore: 80\n{fenced}")]).repeating(),
        ScriptRule::new(Matcher::contains("ROLE: enhance"), [fenced.clone()]).repeating(),
        ScriptRule::new(Matcher::contains("ROLE: equivalence"), ["VERDICT: EQUIVALENT"]).repeating(),
        ScriptRule::new(Matcher::contains("ROLE: decision"), ["OTHER: no correlated rescans\nDECISION: ACCEPT"]).repeating(),
        ScriptRule::new(Matcher::contains("ROLE: hints"), ["no misestimates"]).repeating(),
    ]);
    let engine = Engine::with_provider(Config::default(), Arc::new(mock))?;
    let out = engine.rewrite(&mut db, &SqlQuery::new(EXAMPLE1_ORIGINAL)?, true)?;
    println!("causes: {:?}", out.run.trace.causes());
    println!("{}", out.final_sql.text());
    drop(db);
    Ok(())
}
