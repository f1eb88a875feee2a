//! Command-line surface of the `quite` binary.

use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::bench::{run_bench, load_workload, save_csv, BenchReport};
use crate::config::{Config, LlmMode};
use crate::db::{DbError, PgDatabase};
use crate::domain::{AgentRole, SqlQuery};
use crate::fixtures::{seed_sql, Scale};
use crate::fsm::{FailureKind, FsmError};
use crate::hints::{analyze_plan, probe, select_hints};
use crate::kb::{self, Category, Corpus, DocIndex, HashingEmbedder, RetrieveOptions};
use crate::pipeline::{provider_for, Engine, EngineRewriter, RewriteReport, SetupError};
use crate::sqltext;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("database connection failed: {0}")]
    Connection(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::InvalidInput(_) => 2,
            CliError::Connection(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl From<DbError> for CliError {
    fn from(e: DbError) -> Self {
        match e {
            DbError::Connection(m) => CliError::Connection(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<SetupError> for CliError {
    fn from(e: SetupError) -> Self {
        match e {
            SetupError::MissingScript | SetupError::MissingEndpoint => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<FsmError> for CliError {
    fn from(e: FsmError) -> Self {
        match e {
            FsmError::InvalidInput(m) => CliError::InvalidInput(m),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "quite", version, about = "Feedback-driven SQL rewriting with LLM agents")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Target database; overrides QUITE_DSN.
    #[arg(long, global = true)]
    pub dsn: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<LlmMode>,
    /// Reply script for mock mode.
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,
    /// Chat-completions endpoint; overrides QUITE_LLM_ENDPOINT.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Model for the rewrite, assistant and decision agents.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Model for the reasoning agent; defaults to --model.
    #[arg(long, global = true)]
    pub reasoning_model: Option<String>,
    /// Knowledge-base JSONL used by the agents.
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long, global = true)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rewrite one query.
    Rewrite(RewriteArgs),
    /// Time a workload before and after rewriting.
    Bench(BenchArgs),
    /// Build or search the knowledge base.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Suggest and validate planner hints.
    #[command(subcommand)]
    Hints(HintsCommand),
}

#[derive(Debug, Args)]
pub struct RewriteArgs {
    /// File holding the query, or `-` for stdin.
    #[arg(long)]
    pub sql: PathBuf,
    /// Write the final SQL here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report with the decision report, trace and hint selection.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// JSON-lines transcript of every LLM call.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Stop after the agent loop.
    #[arg(long)]
    pub no_hints: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory of `.sql` files, one query each.
    #[arg(long)]
    pub workload: PathBuf,
    /// Per-query CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Full JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Rewrite without the hint stage.
    #[arg(long)]
    pub no_hints: bool,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub warmups: Option<usize>,
    /// Per-run timeout in seconds.
    #[arg(long)]
    pub cap_s: Option<f64>,
    /// Load the bundled schema first, at this scale.
    #[arg(long, value_parser = ["tiny", "default"])]
    pub seed: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Ingest, filter, enhance and classify raw discussion units.
    Build(KbBuildArgs),
    /// Rank entries against a text.
    Query(KbQueryArgs),
}

#[derive(Debug, Args)]
pub struct KbBuildArgs {
    /// Directory of JSON units, one file each.
    #[arg(long)]
    pub units: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines documentation points for enhancement.
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Filter and classify with heuristics only; no LLM calls.
    #[arg(long)]
    pub offline: bool,
}

#[derive(Debug, Args)]
pub struct KbQueryArgs {
    pub text: String,
    #[arg(short, default_value_t = kb::DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub category: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum HintsCommand {
    /// Analyze a query's plan and print the hints that survive selection.
    Analyze(HintsArgs),
}

#[derive(Debug, Args)]
pub struct HintsArgs {
    #[arg(long)]
    pub sql: PathBuf,
    /// Use the plan heuristics only; no LLM calls.
    #[arg(long)]
    pub offline: bool,
}

/// File values, then environment, then flags.
pub fn resolve_config(g: &GlobalArgs) -> Result<Config, CliError> {
    let mut cfg = Config::resolve(g.config.as_deref()).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(v) = &g.dsn {
        cfg.dsn = Some(v.clone());
    }
    if let Some(v) = g.mode {
        cfg.llm.mode = v;
    }
    if let Some(v) = &g.script {
        cfg.llm.script = Some(v.clone());
    }
    if let Some(v) = &g.endpoint {
        cfg.llm.endpoint = Some(v.clone());
    }
    if let Some(v) = &g.model {
        cfg.llm.model = v.clone();
    }
    if let Some(v) = &g.reasoning_model {
        cfg.llm.reasoning_model = Some(v.clone());
    }
    if let Some(v) = &g.kb {
        cfg.kb = Some(v.clone());
    }
    if let Some(v) = &g.prompts {
        cfg.prompts_dir = Some(v.clone());
    }
    Ok(cfg)
}

fn read_sql(path: &Path) -> Result<SqlQuery, CliError> {
    let mut text = String::new();
    if path.as_os_str() == "-" {
        std::io::stdin().read_to_string(&mut text).map_err(runtime)?;
    } else {
        text = std::fs::read_to_string(path).map_err(|e| CliError::InvalidInput(format!("{}: {e}", path.display())))?;
    }
    SqlQuery::new(text.trim()).map_err(|e| CliError::InvalidInput(e.to_string()))
}

fn connect(cfg: &Config) -> Result<PgDatabase, CliError> {
    let dsn = cfg
        .dsn
        .as_deref()
        .ok_or_else(|| CliError::Usage("missing DSN: pass --dsn or set QUITE_DSN".into()))?;
    Ok(PgDatabase::connect_dsn(dsn)?)
}

fn print_json<T: Serialize>(v: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(v).map_err(runtime)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::Rewrite(a) => cmd_rewrite(cfg, a),
        Command::Bench(a) => cmd_bench(cfg, a),
        Command::Kb(KbCommand::Build(a)) => cmd_kb_build(cfg, a),
        Command::Kb(KbCommand::Query(a)) => cmd_kb_query(cfg, a),
        Command::Hints(HintsCommand::Analyze(a)) => cmd_hints(cfg, a),
    }
}

fn cmd_rewrite(cfg: Config, a: RewriteArgs) -> Result<(), CliError> {
    let q0 = read_sql(&a.sql)?;
    let mut db = connect(&cfg)?;
    let with_hints = cfg.hints.enabled && !a.no_hints;
    let engine = Engine::from_config(cfg)?;
    let out = engine.rewrite(&mut db, &q0, with_hints)?;
    let final_text = format!("{}\n", out.final_sql.text());
    match &a.out {
        Some(p) => std::fs::write(p, &final_text).map_err(runtime)?,
        None => print!("{final_text}"),
    }
    if let Some(p) = &a.transcript {
        engine.transcript().save_jsonl(p).map_err(runtime)?;
    }
    let failure = out.run.failure.clone();
    if let Some(p) = &a.report {
        let report = RewriteReport { output: out, transcript: a.transcript.as_ref().map(|p| p.display().to_string()) };
        report.save(p).map_err(runtime)?;
    }
    match failure {
        Some(f) if f.kind == FailureKind::Connection => Err(CliError::Connection(f.message)),
        Some(f) => {
            tracing::warn!(kind = ?f.kind, message = %f.message, "returned the original query");
            Ok(())
        }
        None => Ok(()),
    }
}

fn cmd_bench(mut cfg: Config, a: BenchArgs) -> Result<(), CliError> {
    if let Some(v) = a.runs {
        cfg.bench.runs = v;
    }
    if let Some(v) = a.warmups {
        cfg.bench.warmups = v;
    }
    if let Some(v) = a.cap_s {
        cfg.bench.cap_s = v;
    }
    let workload = load_workload(&a.workload).map_err(|e| CliError::InvalidInput(format!("{}: {e}", a.workload.display())))?;
    if workload.is_empty() {
        return Err(CliError::InvalidInput(format!("no .sql files in {}", a.workload.display())));
    }
    let mut db = connect(&cfg)?;
    if let Some(s) = &a.seed {
        let scale = if s == "tiny" { Scale::tiny() } else { Scale::default() };
        db.batch(&seed_sql(&scale))?;
    }
    let opts = cfg.bench.run_options();
    let with_hints = cfg.hints.enabled && !a.no_hints;
    let engine = Engine::from_config(cfg)?;
    let mut rewriter = EngineRewriter::new(&engine, with_hints);
    let report: BenchReport = run_bench(&workload, &mut db, &mut rewriter, &opts)?;
    if let Some(p) = &a.csv {
        save_csv(&report.records(), p).map_err(runtime)?;
    }
    if let Some(p) = &a.report {
        let text = serde_json::to_string_pretty(&report).map_err(runtime)?;
        std::fs::write(p, text).map_err(runtime)?;
    }
    print_json(&report.summary)
}

fn cmd_kb_build(cfg: Config, a: KbBuildArgs) -> Result<(), CliError> {
    let raw = kb::read_units(&a.units).map_err(|e| CliError::InvalidInput(e.to_string()))?;
    let ingested = kb::ingest(&raw);
    for (id, why) in &ingested.skipped {
        tracing::warn!(unit = %id, reason = %why, "unit skipped");
    }
    let llm = if a.offline {
        None
    } else {
        let engine = Engine::with_provider(cfg.clone(), provider_for(&cfg)?)?;
        Some((engine.llms.decision.for_role(AgentRole::Knowledge), engine.prompts))
    };
    let llm_ref = llm.as_ref().map(|(l, p)| (l, p));
    let filtered = kb::filter(ingested.entries, llm_ref);
    let mut entries = filtered.kept;
    if let (Some(docs), Some((l, p))) = (&a.docs, llm_ref) {
        let points = DocIndex::load_points(docs).map_err(|e| CliError::InvalidInput(format!("{}: {e}", docs.display())))?;
        let embedder = HashingEmbedder::default();
        let index = DocIndex::build(points, &embedder).map_err(runtime)?;
        entries = entries.into_iter().map(|e| kb::enhance(e, &index, &embedder, l, p).entry).collect();
    }
    for e in &mut entries {
        e.category = kb::classify(e, llm_ref);
    }
    let corpus = Corpus::new(entries);
    corpus.save(&a.out).map_err(runtime)?;
    print_json(&serde_json::json!({
        "units": raw.len(),
        "skipped": ingested.skipped.len(),
        "dropped": filtered.dropped,
        "entries": corpus.len(),
        "out": a.out.display().to_string(),
    }))
}

fn cmd_kb_query(cfg: Config, a: KbQueryArgs) -> Result<(), CliError> {
    let corpus = match &cfg.kb {
        Some(p) => Corpus::load(p).map_err(|e| CliError::InvalidInput(e.to_string()))?,
        None => Corpus::fixture(),
    };
    let category = match &a.category {
        Some(c) => Some(
            Category::ALL
                .into_iter()
                .find(|x| x.as_str() == c)
                .ok_or_else(|| CliError::Usage(format!("unknown category {c}")))?,
        ),
        None => None,
    };
    let hits = corpus.retrieve(&a.text, &RetrieveOptions { k: a.k, category, drop_zero: true });
    let rows: Vec<_> = hits
        .iter()
        .map(|h| serde_json::json!({ "id": h.entry.id, "score": h.score, "category": h.entry.category.as_str() }))
        .collect();
    print_json(&rows)
}

fn cmd_hints(cfg: Config, a: HintsArgs) -> Result<(), CliError> {
    let q = read_sql(&a.sql)?;
    if !sqltext::is_read_only_query(q.text()) {
        return Err(CliError::InvalidInput("only a single read-only query can be hinted".into()));
    }
    let mut db = connect(&cfg)?;
    let hint_cfg = cfg.hints.analysis;
    let engine = if a.offline { None } else { Some(Engine::from_config(cfg)?) };
    let extension = probe(&mut db);
    let explained = crate::db::Database::explain(&mut db, &q)?;
    let stats = crate::db::Database::snapshot_stats(&mut db, &sqltext::referenced_tables(q.text())).unwrap_or_default();
    let llm = engine.as_ref().map(|e| (e.llms.decision.for_role(AgentRole::Hints), &e.prompts));
    let suggestions = analyze_plan(&explained.plan, &stats, q.text(), llm.as_ref().map(|(l, p)| (l, *p)), &hint_cfg);
    let selection = select_hints(&suggestions, &q, &mut db, &hint_cfg)?;
    print_json(&serde_json::json!({
        "extension_loaded": extension.extension_loaded,
        "suggestions": suggestions,
        "selection": selection,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let cli = Cli::try_parse_from(["quite", "--dsn", "host=flag", "--mode", "live", "kb", "query", "join"]).unwrap();
        let cfg = resolve_config(&cli.global).unwrap();
        assert_eq!(cfg.dsn.as_deref(), Some("host=flag"));
        assert_eq!(cfg.llm.mode, LlmMode::Live);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage(String::new()).exit_code(), 2);
        assert_eq!(CliError::InvalidInput(String::new()).exit_code(), 2);
        assert_eq!(CliError::from(DbError::Connection("x".into())).exit_code(), 1);
    }
}
