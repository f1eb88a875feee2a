//! Drives the `quite` binary end to end.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{fenced, pg};
use quite::fixtures::{Scale, EXAMPLE1_ORIGINAL, EXAMPLE1_REWRITTEN};
use tempfile::TempDir;

fn quite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quite"))
        .args(args)
        .env_remove("QUITE_DSN")
        .env_remove("QUITE_LLM_ENDPOINT")
        .env_remove("QUITE_LLM_KEY")
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn enhanced() -> String {
    EXAMPLE1_REWRITTEN.replace("pt.total > c.threshold", "c.threshold < pt.total")
}

/// Script plus query file in a fresh directory.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let rule = |role: &str, reply: String| serde_json::json!({ "contains": format!("ROLE: {role}"), "response": reply, "repeat": true });
    let script = serde_json::json!({ "rules": [
        rule("reasoning", format!("Step: precompute totals per product\nScore: 40\n{}", fenced(EXAMPLE1_REWRITTEN))),
        rule("enhance", fenced(&enhanced())),
        rule("equivalence", "VERDICT: EQUIVALENT".into()),
        rule("decision", "OTHER: the correlated subquery is gone\nDECISION: ACCEPT".into()),
        rule("hints", "all estimates look fine".into()),
    ]});
    std::fs::write(dir.path().join("s.json"), script.to_string()).unwrap();
    std::fs::write(dir.path().join("q.sql"), EXAMPLE1_ORIGINAL).unwrap();
    dir
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

#[test]
fn missing_dsn_is_a_usage_error() {
    let ws = workspace();
    let out = quite(&["rewrite", "--sql", &p(&ws, "q.sql"), "--script", &p(&ws, "s.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("missing DSN"), "{}", text(&out.stderr));
}

#[test]
fn unreachable_database_exits_one() {
    let ws = workspace();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dsn = format!("host=127.0.0.1 port={port} user=postgres connect_timeout=2");
    let out = quite(&["rewrite", "--dsn", &dsn, "--sql", &p(&ws, "q.sql"), "--script", &p(&ws, "s.json")]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
}

#[test]
fn rewrite_is_deterministic_and_reported() {
    let Some(pg) = pg(Scale::tiny()) else { return };
    let ws = workspace();
    let dsn = pg.cluster.dsn();
    let args = |report: &str| {
        vec![
            "rewrite".to_string(), "--dsn".into(), dsn.clone(), "--mode".into(), "mock".into(),
            "--script".into(), p(&ws, "s.json"), "--sql".into(), p(&ws, "q.sql"),
            "--report".into(), p(&ws, report), "--transcript".into(), p(&ws, "t.jsonl"),
        ]
    };
    let run = |report: &str| {
        let a = args(report);
        quite(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let first = run("r1.json");
    assert!(first.status.success(), "{}", text(&first.stderr));
    let second = run("r2.json");
    assert_eq!(text(&first.stdout), text(&second.stdout));
    assert!(text(&first.stdout).contains("c.threshold < pt.total"));

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path().join("r1.json")).unwrap()).unwrap();
    let causes: Vec<&str> = report["run"]["trace"]["steps"].as_array().unwrap().iter().map(|s| s["cause"].as_str().unwrap()).collect();
    assert_eq!(causes, ["proposed", "verified", "accepted"]);
    let dr = &report["run"]["outcome"]["report"];
    for key in ["cost_changes", "plan_characteristics", "resource_utilization", "other_improvements"] {
        assert!(!dr[key].is_null(), "{key}");
    }
    assert!(report["hints"].is_object());
    assert!(Path::new(&p(&ws, "t.jsonl")).exists());
}

#[test]
fn no_hints_flag_skips_hint_stage() {
    let Some(pg) = pg(Scale::tiny()) else { return };
    let ws = workspace();
    let out = quite(&[
        "rewrite", "--dsn", &pg.cluster.dsn(), "--script", &p(&ws, "s.json"), "--sql", &p(&ws, "q.sql"),
        "--no-hints", "--out", &p(&ws, "out.sql"), "--report", &p(&ws, "r.json"),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let sql = std::fs::read_to_string(ws.path().join("out.sql")).unwrap();
    assert!(!sql.contains("/*+"));
    assert_eq!(sql.trim(), enhanced());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path().join("r.json")).unwrap()).unwrap();
    assert!(report["hints"].is_null());
}

#[test]
fn write_statement_is_invalid_input() {
    let Some(pg) = pg(Scale::tiny()) else { return };
    let ws = workspace();
    std::fs::write(ws.path().join("bad.sql"), "DELETE FROM t").unwrap();
    let out = quite(&["rewrite", "--dsn", &pg.cluster.dsn(), "--script", &p(&ws, "s.json"), "--sql", &p(&ws, "bad.sql")]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
}

#[test]
fn llm_failure_falls_back_to_the_original() {
    let Some(pg) = pg(Scale::tiny()) else { return };
    let ws = workspace();
    std::fs::write(ws.path().join("empty.json"), r#"{"rules": []}"#).unwrap();
    let out = quite(&["rewrite", "--dsn", &pg.cluster.dsn(), "--script", &p(&ws, "empty.json"), "--sql", &p(&ws, "q.sql"), "--no-hints"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).trim(), EXAMPLE1_ORIGINAL);
}

#[test]
fn bench_writes_csv_and_summary() {
    let Some(pg) = pg(Scale::tiny()) else { return };
    let ws = workspace();
    let wl = ws.path().join("wl");
    std::fs::create_dir(&wl).unwrap();
    std::fs::write(wl.join("a.sql"), EXAMPLE1_ORIGINAL).unwrap();
    std::fs::write(wl.join("b.sql"), "SELECT a FROM t WHERE a > 50").unwrap();
    let out = quite(&[
        "bench", "--dsn", &pg.cluster.dsn(), "--script", &p(&ws, "s.json"), "--workload", wl.to_str().unwrap(),
        "--csv", &p(&ws, "b.csv"), "--runs", "1", "--warmups", "0", "--no-hints",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&text(&out.stdout)).unwrap();
    assert_eq!(summary["queries"], 2);
    let csv = std::fs::read_to_string(ws.path().join("b.csv")).unwrap();
    assert!(csv.starts_with("query_id,orig_mean_s,rw_mean_s,equivalent,improved,speedup\n"), "{csv}");
    assert_eq!(csv.lines().count(), 3);
    let records = quite::bench::read_csv(csv.as_bytes()).unwrap();
    // The script's rewrite only fits the first query; the second keeps its own text.
    assert!(records[0].equivalent);
    assert!(records[1].equivalent);
    assert_eq!(quite::bench::BenchSummary::from_records(&records).equivalence_rate, summary["equivalence_rate"].as_f64().unwrap());
}

#[test]
fn kb_build_offline_then_query() {
    let ws = workspace();
    let units = ws.path().join("units");
    std::fs::create_dir(&units).unwrap();
    let unit = serde_json::json!([
        {"id": "u1", "question": "Why is my correlated subquery slow?", "sql": "SELECT * FROM a WHERE x > (SELECT avg(x) FROM b WHERE b.k = a.k)",
         "answers": [{"text": "Decorrelate it into a join with a grouped subquery", "sql": "SELECT a.* FROM a JOIN (SELECT k, avg(x) m FROM b GROUP BY k) g ON g.k = a.k WHERE a.x > g.m", "likes": 12}]},
        {"id": "u2", "question": "Constant expression in predicate", "sql": "SELECT * FROM t WHERE a + 0 = 3",
         "answers": [{"text": "Fold the constant so the index applies", "sql": "SELECT * FROM t WHERE a = 3", "likes": 4}]},
        {"id": "u3", "question": "no answers here", "sql": "SELECT 1", "answers": []}
    ]);
    std::fs::write(units.join("units.json"), unit.to_string()).unwrap();
    let out = quite(&["kb", "build", "--units", units.to_str().unwrap(), "--out", &p(&ws, "kb.jsonl"), "--offline"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stats: serde_json::Value = serde_json::from_str(&text(&out.stdout)).unwrap();
    assert_eq!(stats["entries"], 2);

    let out = quite(&["kb", "query", "--kb", &p(&ws, "kb.jsonl"), "correlated subquery", "-k", "1"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let hits: serde_json::Value = serde_json::from_str(&text(&out.stdout)).unwrap();
    assert_eq!(hits.as_array().unwrap().len(), 1);
    assert!(hits[0]["id"].as_str().unwrap().starts_with("u1"));
}

#[test]
fn kb_query_on_bundled_corpus_needs_no_database() {
    let out = quite(&["kb", "query", "join order of large tables"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let hits: serde_json::Value = serde_json::from_str(&text(&out.stdout)).unwrap();
    assert_eq!(hits.as_array().unwrap().len(), 3);
    let bad = quite(&["kb", "query", "x", "--category", "nonsense"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn hints_analyze_offline() {
    let Some(pg) = pg(Scale::tiny()) else { return };
    let ws = workspace();
    let out = quite(&["hints", "analyze", "--dsn", &pg.cluster.dsn(), "--sql", &p(&ws, "q.sql"), "--offline"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&text(&out.stdout)).unwrap();
    assert_eq!(v["extension_loaded"], false);
    assert!(v["selection"]["base_cost"].as_f64().unwrap() > 0.0);
}
