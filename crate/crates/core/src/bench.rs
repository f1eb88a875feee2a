//! Benchmark harness: latency per query before and after rewriting,
//! equivalence by output comparison, and the summary statistics.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{check_results, Database, DbError, RunOptions, TimedRun};
use crate::domain::SqlQuery;

/// A rewrite must run at most this fraction of the original's mean time to
/// count as an improvement.
pub const IMPROVEMENT_RATIO: f64 = 0.9;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Mean of a series of measured runs. Timed-out runs count at the cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub mean_s: f64,
    pub runs: usize,
    pub timed_out: bool,
}

impl Latency {
    pub fn from_runs(runs: &[TimedRun]) -> Self {
        let n = runs.len().max(1) as f64;
        Self {
            mean_s: runs.iter().map(|r| r.latency_seconds).sum::<f64>() / n,
            runs: runs.len(),
            timed_out: runs.iter().any(|r| r.timed_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query_id: String,
    pub orig_mean_s: f64,
    /// Equals `orig_mean_s` whenever the rewrite is not equivalent.
    pub rw_mean_s: f64,
    pub equivalent: bool,
    pub improved: bool,
    pub speedup: f64,
}

impl RunRecord {
    /// Applies the charging and improvement rules to raw measurements.
    /// `rw_mean_s` is ignored when the rewrite is not equivalent.
    pub fn new(query_id: impl Into<String>, orig_mean_s: f64, rw_mean_s: f64, equivalent: bool) -> Self {
        let rw = if equivalent { rw_mean_s } else { orig_mean_s };
        let improved = equivalent && rw <= IMPROVEMENT_RATIO * orig_mean_s;
        let speedup = if rw > 0.0 { orig_mean_s / rw } else { 1.0 };
        Self { query_id: query_id.into(), orig_mean_s, rw_mean_s: rw, equivalent, improved, speedup }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub median: f64,
    pub p75: f64,
    pub p95: f64,
}

impl LatencyStats {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mean = if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Self {
            mean,
            median: nearest_rank(&v, 50.0),
            p75: nearest_rank(&v, 75.0),
            p95: nearest_rank(&v, 95.0),
        }
    }
}

/// Nearest-rank percentile of an ascending slice: the smallest value with
/// at least `p` percent of the data at or below it. Zero for empty input.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub queries: usize,
    pub original: LatencyStats,
    pub rewritten: LatencyStats,
    pub equivalence_rate: f64,
    pub improvement_rate: f64,
}

impl BenchSummary {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let n = records.len();
        let rate = |f: fn(&RunRecord) -> bool| {
            if n == 0 {
                0.0
            } else {
                records.iter().filter(|r| f(r)).count() as f64 / n as f64
            }
        };
        let orig: Vec<f64> = records.iter().map(|r| r.orig_mean_s).collect();
        let rw: Vec<f64> = records.iter().map(|r| r.rw_mean_s).collect();
        Self {
            queries: n,
            original: LatencyStats::of(&orig),
            rewritten: LatencyStats::of(&rw),
            equivalence_rate: rate(|r| r.equivalent),
            improvement_rate: rate(|r| r.improved),
        }
    }
}

pub fn write_csv<W: io::Write>(records: &[RunRecord], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<RunRecord>, BenchError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|x| x.map_err(BenchError::from)).collect()
}

pub fn save_csv(records: &[RunRecord], path: &Path) -> Result<(), BenchError> {
    write_csv(records, std::fs::File::create(path)?)
}

/// Anything that turns a query into a candidate rewrite.
pub trait Rewriter {
    fn rewrite(&mut self, q: &SqlQuery, db: &mut dyn Database) -> Result<SqlQuery, String>;
}

impl<F> Rewriter for F
where
    F: FnMut(&SqlQuery, &mut dyn Database) -> Result<SqlQuery, String>,
{
    fn rewrite(&mut self, q: &SqlQuery, db: &mut dyn Database) -> Result<SqlQuery, String> {
        self(q, db)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub record: RunRecord,
    pub rewritten: Option<SqlQuery>,
    /// Why the rewrite was charged the original's time, if it was.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub queries: Vec<QueryEval>,
    pub summary: BenchSummary,
}

impl BenchReport {
    pub fn records(&self) -> Vec<RunRecord> {
        self.queries.iter().map(|q| q.record.clone()).collect()
    }
}

fn measure(db: &mut dyn Database, q: &SqlQuery, opts: &RunOptions) -> Result<Latency, DbError> {
    if let Err(e) = db.clear_caches() {
        tracing::debug!(error = %e, "cache reset skipped");
    }
    Ok(Latency::from_runs(&db.timed_execute(q, opts)?))
}

/// Evaluates one query. Only a lost connection aborts; every other failure
/// is recorded on the query.
pub fn evaluate(
    id: &str,
    q: &SqlQuery,
    db: &mut dyn Database,
    rewriter: &mut dyn Rewriter,
    opts: &RunOptions,
) -> Result<QueryEval, DbError> {
    let orig = match measure(db, q, opts) {
        Ok(l) => l,
        Err(e @ DbError::Connection(_)) => return Err(e),
        Err(e) => {
            let note = format!("original failed: {e}");
            return Ok(QueryEval { record: RunRecord::new(id, 0.0, 0.0, false), rewritten: None, note: Some(note) });
        }
    };
    let charged = |note: String, rewritten| QueryEval {
        record: RunRecord::new(id, orig.mean_s, orig.mean_s, false),
        rewritten,
        note: Some(note),
    };
    let rw = match rewriter.rewrite(q, db) {
        Ok(rw) => rw,
        Err(e) => return Ok(charged(format!("rewrite failed: {e}"), None)),
    };
    if rw.text() == q.text() {
        // Same text, same measurement; re-timing would only add noise.
        return Ok(QueryEval { record: RunRecord::new(id, orig.mean_s, orig.mean_s, true), rewritten: Some(rw), note: None });
    }
    let check = check_results(db, q, &rw);
    if !check.equal {
        return Ok(charged(format!("not equivalent: {}", check.reason.unwrap_or_default()), Some(rw)));
    }
    match measure(db, &rw, opts) {
        Ok(l) => Ok(QueryEval { record: RunRecord::new(id, orig.mean_s, l.mean_s, true), rewritten: Some(rw), note: None }),
        Err(e @ DbError::Connection(_)) => Err(e),
        Err(e) => Ok(charged(format!("rewrite failed to run: {e}"), Some(rw))),
    }
}

/// Runs the workload in order, one query at a time.
pub fn run_bench(
    workload: &[(String, SqlQuery)],
    db: &mut dyn Database,
    rewriter: &mut dyn Rewriter,
    opts: &RunOptions,
) -> Result<BenchReport, DbError> {
    let mut queries = Vec::with_capacity(workload.len());
    for (id, q) in workload {
        let eval = evaluate(id, q, db, rewriter, opts)?;
        tracing::info!(query = %id, speedup = eval.record.speedup, equivalent = eval.record.equivalent, "benchmarked");
        queries.push(eval);
    }
    let summary = BenchSummary::from_records(&queries.iter().map(|q| q.record.clone()).collect::<Vec<_>>());
    Ok(BenchReport { queries, summary })
}

/// Reads every `*.sql` file of a directory, sorted by name; the file stem
/// becomes the query id.
pub fn load_workload(dir: &Path) -> io::Result<Vec<(String, SqlQuery)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sql"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        match SqlQuery::new(text.trim()) {
            Ok(q) => out.push((id, q)),
            Err(e) => tracing::warn!(file = %p.display(), error = %e, "skipping workload file"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::db::StubDatabase;
    use proptest::prelude::*;

    fn q(s: &str) -> SqlQuery {
        SqlQuery::new(s).unwrap()
    }

    #[test]
    fn percentiles_on_known_vector() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        let s = LatencyStats::of(&v);
        assert_eq!(s.mean, 10.5);
        assert_eq!(s.median, 10.0);
        assert_eq!(s.p75, 15.0);
        assert_eq!(s.p95, 19.0);
        assert_eq!(nearest_rank(&[], 50.0), 0.0);
        assert_eq!(nearest_rank(&[3.0], 95.0), 3.0);
    }

    #[test]
    fn improvement_needs_ten_percent() {
        assert!(RunRecord::new("a", 1.0, 0.9, true).improved);
        assert!(!RunRecord::new("a", 1.0, 0.91, true).improved);
        let r = RunRecord::new("a", 1.0, 0.1, false);
        assert!(!r.improved);
        assert_eq!(r.rw_mean_s, 1.0);
        assert_eq!(r.speedup, 1.0);
    }

    #[test]
    fn wrong_output_is_charged_original_time() {
        let mut db = StubDatabase::new().with_latency("SELECT 1", 2.0).with_latency("SELECT 2", 0.5);
        let mut rw = |_: &SqlQuery, _: &mut dyn Database| Ok(q("SELECT 2"));
        let e = evaluate("x", &q("SELECT 1"), &mut db, &mut rw, &RunOptions::default()).unwrap();
        assert!(!e.record.equivalent);
        assert_eq!(e.record.rw_mean_s, 2.0);
        assert!(e.note.unwrap().starts_with("not equivalent"));
    }

    #[test]
    fn one_of_three_improved() {
        let mut db = StubDatabase::new()
            .with_latency("SELECT 1", 1.0)
            .with_latency("SELECT 2", 1.0)
            .with_latency("SELECT 3", 1.0)
            .with_latency("SELECT 1 AS x", 0.2)
            .with_same_results("SELECT 1", "SELECT 1 AS x");
        let mut rw = |q0: &SqlQuery, _: &mut dyn Database| {
            Ok(if q0.text() == "SELECT 1" { q("SELECT 1 AS x") } else { q0.clone() })
        };
        let wl: Vec<_> = ["SELECT 1", "SELECT 2", "SELECT 3"].iter().enumerate().map(|(i, s)| (format!("q{i}"), q(s))).collect();
        let rep = run_bench(&wl, &mut db, &mut rw, &RunOptions::default()).unwrap();
        assert_eq!(rep.summary.improvement_rate, 1.0 / 3.0);
        assert_eq!(rep.summary.equivalence_rate, 1.0);
    }

    #[test]
    fn identity_rewrites_improve_nothing() {
        let mut db = StubDatabase::new();
        let mut rw = |q0: &SqlQuery, _: &mut dyn Database| Ok(q0.clone());
        let wl: Vec<_> = (0..4).map(|i| (format!("q{i}"), q(&format!("SELECT {i}")))).collect();
        let rep = run_bench(&wl, &mut db, &mut rw, &RunOptions::default()).unwrap();
        assert_eq!(rep.summary.improvement_rate, 0.0);
        assert_eq!(rep.summary.equivalence_rate, 1.0);
    }

    proptest! {
        #[test]
        fn nearest_rank_matches_sort_oracle(v in prop::collection::vec(0.0f64..1e4, 1..60), p in 1u32..=100) {
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            // Oracle: smallest element whose rank covers p percent.
            let n = sorted.len();
            let oracle = sorted.iter().enumerate()
                .find(|(i, _)| (*i as f64 + 1.0) * 100.0 >= p as f64 * n as f64)
                .map(|(_, x)| *x)
                .unwrap();
            prop_assert_eq!(nearest_rank(&sorted, p as f64), oracle);
        }

        #[test]
        fn csv_round_trip_keeps_summary(rows in prop::collection::vec((0.001f64..100.0, 0.001f64..100.0, any::<bool>()), 0..30)) {
            let records: Vec<_> = rows.iter().enumerate().map(|(i, (o, r, eq))| RunRecord::new(format!("q{i}"), *o, *r, *eq)).collect();
            let mut buf = Vec::new();
            write_csv(&records, &mut buf).unwrap();
            let back = read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &records);
            prop_assert_eq!(BenchSummary::from_records(&back), BenchSummary::from_records(&records));
        }

        #[test]
        fn record_invariants(o in 0.001f64..100.0, r in 0.001f64..100.0, eq in any::<bool>()) {
            let rec = RunRecord::new("q", o, r, eq);
            prop_assert!(!rec.improved || rec.equivalent);
            prop_assert_eq!(rec.improved, rec.equivalent && rec.rw_mean_s <= 0.9 * rec.orig_mean_s);
        }
    }
}
