use std::collections::HashMap;

use super::{
    Database, DbError, Explained, PlanNode, PlanTree, ResultSet, RunOptions, StatsSnapshot,
    TableStats, TimedRun,
};
use crate::db::OperatorKind;
use crate::domain::SqlQuery;
use crate::sqltext;

/// In-memory stand-in for a database, keyed by normalized SQL text.
///
/// Hint blocks are ignored when looking queries up, like a server without
/// pg_hint_plan. Text that fails the local grammar check is rejected as a
/// syntax error. Unregistered queries get `default_cost`, `default_latency`
/// and a one-row result holding their own normalized text, so distinct
/// unregistered queries never compare equal.
#[derive(Debug, Clone)]
pub struct StubDatabase {
    costs: HashMap<String, f64>,
    plans: HashMap<String, PlanTree>,
    latencies: HashMap<String, f64>,
    results: HashMap<String, ResultSet>,
    stats: StatsSnapshot,
    pub default_cost: f64,
    pub default_latency: f64,
    pub hint_extension: bool,
    pub offline: bool,
    pub explain_calls: usize,
    pub fetch_calls: usize,
}

impl Default for StubDatabase {
    fn default() -> Self {
        Self::new()
    }
}

fn key(q: &str) -> String {
    sqltext::normalize_ws(sqltext::split_hint_block(q).1)
}

impl StubDatabase {
    pub fn new() -> Self {
        Self {
            costs: HashMap::new(),
            plans: HashMap::new(),
            latencies: HashMap::new(),
            results: HashMap::new(),
            stats: StatsSnapshot::default(),
            default_cost: 100.0,
            default_latency: 1.0,
            hint_extension: false,
            offline: false,
            explain_calls: 0,
            fetch_calls: 0,
        }
    }

    pub fn with_cost(mut self, sql: &str, cost: f64) -> Self {
        self.costs.insert(key(sql), cost);
        self
    }

    pub fn with_plan(mut self, sql: &str, plan: PlanTree) -> Self {
        self.plans.insert(key(sql), plan);
        self
    }

    pub fn with_latency(mut self, sql: &str, seconds: f64) -> Self {
        self.latencies.insert(key(sql), seconds);
        self
    }

    pub fn with_rows(mut self, sql: &str, rows: ResultSet) -> Self {
        self.results.insert(key(sql), rows);
        self
    }

    /// Makes `b` return whatever `a` returns.
    pub fn with_same_results(mut self, a: &str, b: &str) -> Self {
        let rows = self.rows_for(a);
        self.results.insert(key(a), rows.clone());
        self.results.insert(key(b), rows);
        self
    }

    pub fn with_table(mut self, name: &str, rows: f64) -> Self {
        self.stats.tables.push(TableStats {
            name: name.to_string(),
            row_count: rows,
            page_count: (rows / 100.0).ceil() as i64,
            ..TableStats::default()
        });
        self
    }

    fn rows_for(&self, sql: &str) -> ResultSet {
        let k = key(sql);
        self.results.get(&k).cloned().unwrap_or_else(|| {
            ResultSet::new(vec!["stub".into()], vec![vec![Some(k)]])
        })
    }

    fn check(&self, q: &SqlQuery) -> Result<(), DbError> {
        if self.offline {
            return Err(DbError::Connection("stub database is offline".into()));
        }
        sqltext::check_grammar(sqltext::split_hint_block(q.text()).1).map_err(|m| {
            DbError::SyntaxRejected {
                message: format!("syntax error: {m}"),
                sqlstate: "42601".into(),
            }
        })
    }
}

impl Database for StubDatabase {
    fn explain(&mut self, q: &SqlQuery) -> Result<Explained, DbError> {
        self.check(q)?;
        self.explain_calls += 1;
        let k = key(q.text());
        if let Some(p) = self.plans.get(&k) {
            return Ok(Explained::new(p.clone()));
        }
        let cost = self.costs.get(&k).copied().unwrap_or(self.default_cost);
        Ok(Explained::new(PlanTree {
            root: PlanNode {
                node_type: "Result".into(),
                kind: OperatorKind::Result,
                relation: None,
                alias: None,
                cte_name: None,
                subplan_name: None,
                join_type: None,
                startup_cost: 0.0,
                total_cost: cost,
                plan_rows: 1.0,
                plan_width: 4,
                children: vec![],
            },
        }))
    }

    fn fetch(&mut self, q: &SqlQuery) -> Result<ResultSet, DbError> {
        self.check(q)?;
        self.fetch_calls += 1;
        Ok(self.rows_for(q.text()))
    }

    fn timed_execute(&mut self, q: &SqlQuery, opts: &RunOptions) -> Result<Vec<TimedRun>, DbError> {
        self.check(q)?;
        let k = key(q.text());
        let latency = self.latencies.get(&k).copied().unwrap_or(self.default_latency);
        let cap = opts.cap.as_secs_f64();
        let rows = self.rows_for(q.text()).rows.len() as u64;
        Ok((0..opts.runs)
            .map(|_| {
                if latency > cap {
                    TimedRun { latency_seconds: cap, timed_out: true, row_count: 0 }
                } else {
                    TimedRun { latency_seconds: latency, timed_out: false, row_count: rows }
                }
            })
            .collect())
    }

    fn snapshot_stats(&mut self, tables: &[String]) -> Result<StatsSnapshot, DbError> {
        if self.offline {
            return Err(DbError::Connection("stub database is offline".into()));
        }
        let mut out = StatsSnapshot::default();
        for t in tables {
            let found = self
                .stats
                .table(t)
                .cloned()
                .ok_or_else(|| DbError::UnknownTable(t.clone()))?;
            out.tables.push(found);
        }
        Ok(out)
    }

    fn schema_ddl(&mut self, tables: &[String]) -> Result<String, DbError> {
        Ok(tables
            .iter()
            .map(|t| format!("CREATE TABLE {t} ();\n"))
            .collect())
    }

    fn hint_extension_available(&mut self) -> bool {
        self.hint_extension
    }
}
