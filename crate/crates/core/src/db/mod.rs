//! Everything that touches the target database: plans and costs, catalog
//! statistics, timed execution, and the execution-based equivalence oracle.

mod ephemeral;
mod plan;
mod postgres;
mod stub;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::ephemeral::{find_pg_bin_dir, ClusterError, EphemeralCluster};
pub use self::plan::{JoinMethod, OperatorKind, PlanNode, PlanTree};
pub use self::postgres::{DbConfig, PgDatabase};
pub use self::stub::StubDatabase;

use crate::domain::{CostEstimate, SqlQuery};
use crate::sqltext;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DbError {
    /// The server refused to parse or bind the statement. The message is the
    /// server's text, verbatim, for the syntax corrector.
    #[error("{message}")]
    SyntaxRejected { message: String, sqlstate: String },
    #[error("connection error: {0}")]
    Connection(String),
    #[error("execution error: {message}")]
    Execution { message: String, sqlstate: String },
    #[error("unknown table: {0}")]
    UnknownTable(String),
    #[error("unexpected EXPLAIN output: {0}")]
    BadPlan(String),
}

impl DbError {
    pub fn is_connection(&self) -> bool {
        matches!(self, DbError::Connection(_))
    }
}

/// A plan together with the cost read from its root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explained {
    pub plan: PlanTree,
    pub cost: CostEstimate,
}

impl Explained {
    pub fn new(plan: PlanTree) -> Self {
        let cost = plan.cost();
        Self { plan, cost }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub n_distinct: Option<f64>,
    pub most_common_vals: Option<String>,
    pub most_common_freqs: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableStats {
    pub name: String,
    pub row_count: f64,
    pub page_count: i64,
    pub columns: Vec<ColumnStats>,
    pub indexes: Vec<String>,
}

/// Catalog statistics for a set of tables. Never built by scanning data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub tables: Vec<TableStats>,
}

impl StatsSnapshot {
    pub fn table(&self, name: &str) -> Option<&TableStats> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn rows(&self, name: &str) -> Option<f64> {
        self.table(name).map(|t| t.row_count)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            out.push_str(&format!(
                "table {}: ~{} rows, {} pages",
                t.name, t.row_count, t.page_count
            ));
            if !t.indexes.is_empty() {
                out.push_str(&format!("; indexes: {}", t.indexes.join("; ")));
            }
            out.push('\n');
            for c in &t.columns {
                if let Some(nd) = c.n_distinct {
                    out.push_str(&format!("  {}.{} n_distinct={}\n", t.name, c.name, nd));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedRun {
    pub latency_seconds: f64,
    pub timed_out: bool,
    pub row_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub warmups: usize,
    pub runs: usize,
    pub cap: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            warmups: 1,
            runs: 3,
            cap: Duration::from_secs(300),
        }
    }
}

/// Rows of a result with every cell in text form (NULL as `None`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl ResultSet {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Option<String>>>) -> Self {
        Self { columns, rows }
    }
}

pub trait Database {
    /// `EXPLAIN (FORMAT JSON)` without ANALYZE: plans, never executes.
    fn explain(&mut self, q: &SqlQuery) -> Result<Explained, DbError>;

    /// Executes a read-only query and returns its rows.
    fn fetch(&mut self, q: &SqlQuery) -> Result<ResultSet, DbError>;

    /// `warmups` unmeasured runs, then exactly `runs` measured ones. A run
    /// that exceeds `cap` is cancelled and recorded as `(cap, timed_out)`.
    fn timed_execute(&mut self, q: &SqlQuery, opts: &RunOptions) -> Result<Vec<TimedRun>, DbError>;

    fn snapshot_stats(&mut self, tables: &[String]) -> Result<StatsSnapshot, DbError>;

    /// `CREATE TABLE` statements for the named tables.
    fn schema_ddl(&mut self, tables: &[String]) -> Result<String, DbError>;

    /// Whether pg_hint_plan is active for this session.
    fn hint_extension_available(&mut self) -> bool;

    /// Drops session caches between measured queries.
    fn clear_caches(&mut self) -> Result<(), DbError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Null,
    Num(f64),
    Text(String),
}

impl Cell {
    fn from_text(v: &Option<String>) -> Self {
        match v {
            None => Cell::Null,
            Some(s) => match s.trim().parse::<f64>() {
                Ok(x) if looks_numeric(s) => Cell::Num(x),
                _ => Cell::Text(s.clone()),
            },
        }
    }

    fn sort_key(&self) -> String {
        match self {
            Cell::Null => "0".into(),
            Cell::Num(x) => format!("1{:.8e}", x),
            Cell::Text(s) => format!("2{s}"),
        }
    }

    fn matches(&self, other: &Cell) -> bool {
        match (self, other) {
            (Cell::Null, Cell::Null) => true,
            (Cell::Num(a), Cell::Num(b)) => floats_close(*a, *b),
            (Cell::Text(a), Cell::Text(b)) => a == b,
            _ => false,
        }
    }
}

fn looks_numeric(s: &str) -> bool {
    let s = s.trim();
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E'))
        && s.chars().any(|c| c.is_ascii_digit())
}

/// Relative tolerance used when comparing numeric cells.
pub const FLOAT_REL_TOL: f64 = 1e-9;

pub fn floats_close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= FLOAT_REL_TOL * a.abs().max(b.abs())
}

/// Compares two result sets cell by cell after type normalization. Rows are
/// compared as a multiset unless `ordered`.
pub fn compare_result_sets(a: &ResultSet, b: &ResultSet, ordered: bool) -> Result<(), String> {
    if a.rows.len() != b.rows.len() {
        return Err(format!("row counts differ: {} vs {}", a.rows.len(), b.rows.len()));
    }
    let width = |r: &ResultSet| r.rows.first().map(Vec::len).unwrap_or(r.columns.len());
    if !a.rows.is_empty() && width(a) != width(b) {
        return Err(format!("column counts differ: {} vs {}", width(a), width(b)));
    }
    let normalize = |r: &ResultSet| -> Vec<Vec<Cell>> {
        let mut rows: Vec<Vec<Cell>> = r
            .rows
            .iter()
            .map(|row| row.iter().map(Cell::from_text).collect())
            .collect();
        if !ordered {
            rows.sort_by_cached_key(|row| row.iter().map(Cell::sort_key).collect::<Vec<_>>());
        }
        rows
    };
    let (ra, rb) = (normalize(a), normalize(b));
    for (i, (x, y)) in ra.iter().zip(&rb).enumerate() {
        if x.len() != y.len() || !x.iter().zip(y).all(|(p, q)| p.matches(q)) {
            return Err(format!("row {i} differs: {x:?} vs {y:?}"));
        }
    }
    Ok(())
}

/// Outcome of the execution oracle for a query pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub equal: bool,
    pub reason: Option<String>,
}

/// Runs both queries and compares their outputs. Order matters only when
/// both queries end in a top-level ORDER BY. Execution failure on either
/// side yields `equal = false` with the reason recorded.
pub fn check_results(db: &mut dyn Database, a: &SqlQuery, b: &SqlQuery) -> OracleCheck {
    let fetch = |db: &mut dyn Database, q: &SqlQuery, side: &str| {
        db.fetch(q).map_err(|e| format!("{side} failed: {e}"))
    };
    let ra = match fetch(db, a, "first query") {
        Ok(r) => r,
        Err(reason) => return OracleCheck { equal: false, reason: Some(reason) },
    };
    let rb = match fetch(db, b, "second query") {
        Ok(r) => r,
        Err(reason) => return OracleCheck { equal: false, reason: Some(reason) },
    };
    let body = |q: &SqlQuery| sqltext::split_hint_block(q.text()).1.to_string();
    let ordered = sqltext::has_top_level_order_by(&body(a)) && sqltext::has_top_level_order_by(&body(b));
    match compare_result_sets(&ra, &rb, ordered) {
        Ok(()) => OracleCheck { equal: true, reason: None },
        Err(reason) => OracleCheck { equal: false, reason: Some(reason) },
    }
}

pub fn results_equal(db: &mut dyn Database, a: &SqlQuery, b: &SqlQuery) -> bool {
    check_results(db, a, b).equal
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rs(rows: &[&[Option<&str>]]) -> ResultSet {
        ResultSet::new(
            vec![],
            rows.iter()
                .map(|r| r.iter().map(|c| c.map(str::to_string)).collect())
                .collect(),
        )
    }

    #[test]
    fn multiset_ignores_order() {
        let a = rs(&[&[Some("1"), Some("x")], &[Some("2"), None]]);
        let b = rs(&[&[Some("2"), None], &[Some("1"), Some("x")]]);
        assert!(compare_result_sets(&a, &b, false).is_ok());
        assert!(compare_result_sets(&a, &b, true).is_err());
    }

    #[test]
    fn multiplicity_matters() {
        let a = rs(&[&[Some("1")], &[Some("1")]]);
        let b = rs(&[&[Some("1")], &[Some("2")]]);
        assert!(compare_result_sets(&a, &b, false).is_err());
    }

    #[test]
    fn numeric_normalization_and_tolerance() {
        let a = rs(&[&[Some("3")]]);
        let b = rs(&[&[Some("3.0000000000")]]);
        assert!(compare_result_sets(&a, &b, false).is_ok());
        let c = rs(&[&[Some("1.0000000000001")]]);
        let d = rs(&[&[Some("1")]]);
        assert!(compare_result_sets(&c, &d, false).is_ok());
        let e = rs(&[&[Some("1.001")]]);
        assert!(compare_result_sets(&e, &d, false).is_err());
    }

    #[test]
    fn null_is_not_text() {
        let a = rs(&[&[None]]);
        let b = rs(&[&[Some("")]]);
        assert!(compare_result_sets(&a, &b, false).is_err());
    }

    #[test]
    fn stub_oracle_identity_and_difference() {
        let mut db = StubDatabase::new();
        let one = SqlQuery::new("SELECT 1").unwrap();
        let two = SqlQuery::new("SELECT 2").unwrap();
        assert!(results_equal(&mut db, &one, &one));
        assert!(!results_equal(&mut db, &one, &two));
    }
}
