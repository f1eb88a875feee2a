use std::str::FromStr;
use std::time::{Duration, Instant};

use postgres::config::Host;
use postgres::{Client, NoTls, SimpleQueryMessage};
use serde::{Deserialize, Serialize};

use super::{
    ColumnStats, Database, DbError, Explained, PlanTree, ResultSet, RunOptions, StatsSnapshot,
    TableStats, TimedRun,
};
use crate::domain::SqlQuery;
use crate::sqltext;

/// Connection parameters of the target database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbConfig {
    pub host: String,
    pub port: u16,
    pub database: String,
    pub user: String,
    #[serde(default, skip_serializing)]
    pub password: Option<String>,
    pub statement_timeout: Duration,
}

impl DbConfig {
    /// Accepts both `postgres://` URLs and `key=value` strings.
    pub fn from_dsn(dsn: &str) -> Result<Self, DbError> {
        let cfg = postgres::Config::from_str(dsn).map_err(|e| DbError::Connection(e.to_string()))?;
        let host = match cfg.get_hosts().first() {
            Some(Host::Tcp(h)) => h.clone(),
            Some(Host::Unix(p)) => p.display().to_string(),
            None => "localhost".into(),
        };
        Ok(Self {
            host,
            port: cfg.get_ports().first().copied().unwrap_or(5432),
            database: cfg.get_dbname().unwrap_or("postgres").to_string(),
            user: cfg.get_user().unwrap_or("postgres").to_string(),
            password: cfg.get_password().map(|p| String::from_utf8_lossy(p).into_owned()),
            statement_timeout: Duration::from_secs(300),
        })
    }

    fn pg_config(&self) -> postgres::Config {
        let mut c = postgres::Config::new();
        c.host(&self.host)
            .port(self.port)
            .dbname(&self.database)
            .user(&self.user)
            .connect_timeout(Duration::from_secs(10));
        if let Some(p) = &self.password {
            c.password(p);
        }
        c
    }
}

fn classify(e: postgres::Error) -> DbError {
    match e.as_db_error() {
        Some(db) => {
            let code = db.code().code().to_string();
            let message = db.message().to_string();
            if code.starts_with("42") || code.starts_with("0A") {
                DbError::SyntaxRejected { message, sqlstate: code }
            } else {
                DbError::Execution { message, sqlstate: code }
            }
        }
        None => DbError::Connection(e.to_string()),
    }
}

fn is_timeout(e: &DbError) -> bool {
    matches!(e, DbError::Execution { sqlstate, .. } if sqlstate == "57014")
}

/// A live PostgreSQL session.
pub struct PgDatabase {
    client: Client,
    config: DbConfig,
    hint_probe: Option<bool>,
}

impl PgDatabase {
    pub fn connect(config: DbConfig) -> Result<Self, DbError> {
        let client = config
            .pg_config()
            .connect(NoTls)
            .map_err(|e| DbError::Connection(e.to_string()))?;
        let mut db = Self {
            client,
            config,
            hint_probe: None,
        };
        db.set_timeout(db.config.statement_timeout)?;
        Ok(db)
    }

    pub fn connect_dsn(dsn: &str) -> Result<Self, DbError> {
        Self::connect(DbConfig::from_dsn(dsn)?)
    }

    pub fn config(&self) -> &DbConfig {
        &self.config
    }

    /// Runs arbitrary SQL (DDL, seeding). Not used on rewrite candidates.
    pub fn batch(&mut self, sql: &str) -> Result<(), DbError> {
        self.client.batch_execute(sql).map_err(classify)
    }

    pub fn client(&mut self) -> &mut Client {
        &mut self.client
    }

    fn set_timeout(&mut self, d: Duration) -> Result<(), DbError> {
        self.batch(&format!("SET statement_timeout = {}", d.as_millis().max(1)))
    }

    /// Rejects multi-statement text: prepared statements hold one command.
    fn prepare(&mut self, q: &SqlQuery) -> Result<postgres::Statement, DbError> {
        self.client.prepare(q.text()).map_err(classify)
    }
}

impl Database for PgDatabase {
    fn explain(&mut self, q: &SqlQuery) -> Result<Explained, DbError> {
        // pg_hint_plan reads hints from the head of the statement, so a hint
        // block stays in front of EXPLAIN.
        let (hint, body) = sqltext::split_hint_block(q.text());
        let sql = match hint {
            Some(h) => format!("/*+{h}*/ EXPLAIN (FORMAT JSON) {body}"),
            None => format!("EXPLAIN (FORMAT JSON) {body}"),
        };
        let rows = self.client.query(sql.as_str(), &[]).map_err(classify)?;
        let row = rows.first().ok_or_else(|| DbError::BadPlan("no rows".into()))?;
        let doc: serde_json::Value = row.try_get(0).map_err(|e| DbError::BadPlan(e.to_string()))?;
        let plan = PlanTree::from_explain_json(&doc).map_err(DbError::BadPlan)?;
        Ok(Explained::new(plan))
    }

    fn fetch(&mut self, q: &SqlQuery) -> Result<ResultSet, DbError> {
        self.prepare(q)?;
        // Candidates come from a model; a read-only transaction keeps any
        // data-modifying text from taking effect.
        let mut txn = self.client.build_transaction().read_only(true).start().map_err(classify)?;
        let messages = txn.simple_query(q.text()).map_err(classify)?;
        txn.rollback().map_err(classify)?;
        let mut out = ResultSet::default();
        for m in messages {
            if let SimpleQueryMessage::Row(row) = m {
                if out.columns.is_empty() {
                    out.columns = row.columns().iter().map(|c| c.name().to_string()).collect();
                }
                out.rows
                    .push((0..row.len()).map(|i| row.get(i).map(str::to_string)).collect());
            }
        }
        Ok(out)
    }

    fn timed_execute(&mut self, q: &SqlQuery, opts: &RunOptions) -> Result<Vec<TimedRun>, DbError> {
        let stmt = self.prepare(q)?;
        let timeout = format!("SET LOCAL statement_timeout = {}", opts.cap.as_millis().max(1));
        let mut out = Vec::with_capacity(opts.runs);
        for i in 0..opts.warmups + opts.runs {
            // One read-only transaction per run, so a cancelled run does not
            // poison the next one.
            let mut txn = self.client.build_transaction().read_only(true).start().map_err(classify)?;
            txn.batch_execute(&timeout).map_err(classify)?;
            let start = Instant::now();
            let run = match txn.execute(&stmt, &[]).map_err(classify) {
                Ok(n) => TimedRun {
                    latency_seconds: start.elapsed().as_secs_f64(),
                    timed_out: false,
                    row_count: n,
                },
                Err(e) if is_timeout(&e) => TimedRun {
                    latency_seconds: opts.cap.as_secs_f64(),
                    timed_out: true,
                    row_count: 0,
                },
                Err(e) => return Err(e),
            };
            txn.rollback().map_err(classify)?;
            if i >= opts.warmups {
                out.push(run);
            }
        }
        Ok(out)
    }

    fn snapshot_stats(&mut self, tables: &[String]) -> Result<StatsSnapshot, DbError> {
        let mut snap = StatsSnapshot::default();
        for name in tables {
            let rows = self
                .client
                .query(
                    "SELECT n.nspname::text, c.relname::text, c.reltuples::float8, c.relpages::int8 \
                     FROM pg_class c JOIN pg_namespace n ON n.oid = c.relnamespace \
                     WHERE c.oid = to_regclass($1)",
                    &[name],
                )
                .map_err(classify)?;
            let Some(row) = rows.first() else {
                return Err(DbError::UnknownTable(name.clone()));
            };
            let schema: String = row.get(0);
            let rel: String = row.get(1);
            let tuples: f64 = row.get(2);
            let pages: i64 = row.get(3);
            let columns = self
                .client
                .query(
                    "SELECT attname::text, n_distinct::float8, most_common_vals::text, \
                            most_common_freqs::float8[] \
                     FROM pg_stats WHERE schemaname = $1 AND tablename = $2 ORDER BY attname",
                    &[&schema, &rel],
                )
                .map_err(classify)?
                .iter()
                .map(|r| ColumnStats {
                    name: r.get(0),
                    n_distinct: r.get(1),
                    most_common_vals: r.get(2),
                    most_common_freqs: r.get::<_, Option<Vec<f64>>>(3).unwrap_or_default(),
                })
                .collect();
            let indexes = self
                .client
                .query(
                    "SELECT indexdef FROM pg_indexes WHERE schemaname = $1 AND tablename = $2 ORDER BY indexname",
                    &[&schema, &rel],
                )
                .map_err(classify)?
                .iter()
                .map(|r| r.get::<_, String>(0))
                .collect();
            snap.tables.push(TableStats {
                name: rel,
                // reltuples is -1 for a table that was never analyzed.
                row_count: tuples.max(0.0),
                page_count: pages.max(0),
                columns,
                indexes,
            });
        }
        Ok(snap)
    }

    fn schema_ddl(&mut self, tables: &[String]) -> Result<String, DbError> {
        let mut out = String::new();
        for name in tables {
            let cols = self
                .client
                .query(
                    "SELECT a.attname::text, format_type(a.atttypid, a.atttypmod), a.attnotnull \
                     FROM pg_attribute a WHERE a.attrelid = to_regclass($1) AND a.attnum > 0 \
                     AND NOT a.attisdropped ORDER BY a.attnum",
                    &[name],
                )
                .map_err(classify)?;
            if cols.is_empty() {
                return Err(DbError::UnknownTable(name.clone()));
            }
            let body: Vec<String> = cols
                .iter()
                .map(|r| {
                    let n: String = r.get(0);
                    let t: String = r.get(1);
                    let nn: bool = r.get(2);
                    format!("  {n} {t}{}", if nn { " NOT NULL" } else { "" })
                })
                .collect();
            out.push_str(&format!("CREATE TABLE {name} (\n{}\n);\n", body.join(",\n")));
        }
        Ok(out)
    }

    fn hint_extension_available(&mut self) -> bool {
        if let Some(p) = self.hint_probe {
            return p;
        }
        let loaded = self
            .client
            .query_one("SELECT current_setting('pg_hint_plan.enable_hint', true)", &[])
            .ok()
            .and_then(|r| r.get::<_, Option<String>>(0))
            .is_some();
        let available = loaded || self.client.batch_execute("LOAD 'pg_hint_plan'").is_ok();
        if !available {
            tracing::warn!("pg_hint_plan is not loaded; hint blocks will be ignored by the server");
        }
        self.hint_probe = Some(available);
        available
    }

    fn clear_caches(&mut self) -> Result<(), DbError> {
        self.batch("DISCARD ALL")?;
        self.hint_probe = None;
        self.set_timeout(self.config.statement_timeout)
    }
}
