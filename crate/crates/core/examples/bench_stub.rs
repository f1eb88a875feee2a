//! The bench harness over a two-query workload on a stub database with
//! pinned latencies. Prints the CSV and the summary.

use quite::bench::{run_bench, write_csv};
use quite::db::{Database, RunOptions, StubDatabase};
use quite::domain::SqlQuery;

fn main() {
    let slow = "SELECT a FROM t WHERE a IN (SELECT a FROM t)";
    let fast = "SELECT a FROM t";
    let other = "SELECT count(*) FROM t";
    let mut db = StubDatabase::new()
        .with_latency(slow, 2.0)
        .with_latency(fast, 0.5)
        .with_latency(other, 0.3)
        .with_same_results(slow, fast);
    let workload = vec![("q1".to_string(), SqlQuery::new(slow).unwrap()), ("q2".to_string(), SqlQuery::new(other).unwrap())];

    // Rewrites the first query, leaves the second alone.
    let mut rewriter = |q: &SqlQuery, _: &mut dyn Database| -> Result<SqlQuery, String> {
        Ok(if q.text() == slow { SqlQuery::new(fast).unwrap() } else { q.clone() })
    };
    let report = run_bench(&workload, &mut db, &mut rewriter, &RunOptions::default()).unwrap();
    write_csv(&report.records(), std::io::stdout()).unwrap();
    println!("{}", serde_json::to_string_pretty(&report.summary).unwrap());
}
