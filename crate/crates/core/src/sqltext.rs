//! Text-level SQL helpers backed by a local PostgreSQL-dialect parser.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use regex::Regex;
use sqlparser::ast::{visit_relations, SetExpr, Statement};
use sqlparser::dialect::PostgreSqlDialect;
use sqlparser::parser::Parser;

/// Collapses runs of whitespace, trims, and drops trailing semicolons.
pub fn normalize_ws(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_end_matches(|c: char| c == ';' || c.is_whitespace()).to_string()
}

pub fn parse(text: &str) -> Result<Vec<Statement>, String> {
    Parser::parse_sql(&PostgreSqlDialect {}, text).map_err(|e| e.to_string())
}

/// Local grammar check; `Err` carries the parser message.
pub fn check_grammar(text: &str) -> Result<(), String> {
    let stmts = parse(text)?;
    if stmts.is_empty() {
        return Err("syntax error: no statement found".into());
    }
    Ok(())
}

/// Splits a leading `/*+ ... */` hint block from the statement.
pub fn split_hint_block(text: &str) -> (Option<&str>, &str) {
    let t = text.trim_start();
    if let Some(rest) = t.strip_prefix("/*+") {
        if let Some(end) = rest.find("*/") {
            return (Some(&rest[..end]), rest[end + 2..].trim_start());
        }
    }
    (None, t)
}

/// True iff the statement is a query whose outermost level carries ORDER BY.
pub fn has_top_level_order_by(text: &str) -> bool {
    match parse(text) {
        Ok(stmts) => match stmts.as_slice() {
            [Statement::Query(q)] => q.order_by.is_some(),
            _ => false,
        },
        Err(_) => {
            // Fall back to a paren-depth scan for the last ORDER BY.
            let lower = text.to_ascii_lowercase();
            let mut depth = 0i32;
            let bytes = lower.as_bytes();
            let mut found = false;
            for (i, &b) in bytes.iter().enumerate() {
                match b {
                    b'(' => depth += 1,
                    b')' => depth -= 1,
                    b'o' if depth == 0 && lower[i..].starts_with("order by") => found = true,
                    _ => {}
                }
            }
            found
        }
    }
}

/// A CTE defined in the outer WITH clause.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CteInfo {
    pub name: String,
    pub references: usize,
    pub has_aggregate: bool,
    pub body: String,
}

fn aggregate_re() -> Regex {
    Regex::new(r"(?i)\b(group\s+by|count|sum|avg|min|max|array_agg|string_agg|distinct)\b").unwrap()
}

/// CTEs of the top-level WITH clause with their reference counts.
pub fn ctes(text: &str) -> Vec<CteInfo> {
    let Ok(stmts) = parse(text) else {
        return Vec::new();
    };
    let [Statement::Query(q)] = stmts.as_slice() else {
        return Vec::new();
    };
    let Some(with) = &q.with else {
        return Vec::new();
    };
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let _ = visit_relations(&stmts, |rel| {
        let name = rel.to_string().to_ascii_lowercase();
        *counts.entry(name).or_default() += 1;
        ControlFlow::<()>::Continue(())
    });
    let agg = aggregate_re();
    with.cte_tables
        .iter()
        .map(|cte| {
            let name = cte.alias.name.value.clone();
            let body = cte.query.to_string();
            CteInfo {
                references: counts.get(&name.to_ascii_lowercase()).copied().unwrap_or(0),
                has_aggregate: agg.is_match(&body),
                name,
                body,
            }
        })
        .collect()
}

/// Base relations referenced anywhere in the statement, excluding CTE names.
pub fn referenced_tables(text: &str) -> Vec<String> {
    let Ok(stmts) = parse(text) else {
        return Vec::new();
    };
    let cte_names: Vec<String> = ctes(text)
        .into_iter()
        .map(|c| c.name.to_ascii_lowercase())
        .collect();
    let mut out = Vec::new();
    let _ = visit_relations(&stmts, |rel| {
        let name = rel.to_string().to_ascii_lowercase();
        if !cte_names.contains(&name) && !out.contains(&name) {
            out.push(name);
        }
        ControlFlow::<()>::Continue(())
    });
    out
}

/// True when the statement is a read-only query (SELECT / WITH ... SELECT).
pub fn is_read_only_query(text: &str) -> bool {
    match parse(split_hint_block(text).1) {
        Ok(stmts) => match stmts.as_slice() {
            [Statement::Query(q)] => !matches!(
                q.body.as_ref(),
                SetExpr::Insert(_) | SetExpr::Update(_)
            ),
            _ => false,
        },
        Err(_) => false,
    }
}

/// Inlines a CTE using core syntax: `name AS (` becomes
/// `name AS NOT MATERIALIZED (`. Returns `None` when the CTE is not found.
pub fn mark_cte_not_materialized(text: &str, cte: &str) -> Option<String> {
    let re = Regex::new(&format!(
        r"(?i)\b({})(\s*\([^)]*\))?\s+AS\s+(?:MATERIALIZED\s+)?\(",
        regex::escape(cte)
    ))
    .ok()?;
    let m = re.captures(text)?;
    let whole = m.get(0)?;
    let cols = m.get(2).map(|c| c.as_str()).unwrap_or("");
    let replacement = format!("{}{} AS NOT MATERIALIZED (", &m[1], cols);
    let mut out = String::with_capacity(text.len() + 20);
    out.push_str(&text[..whole.start()]);
    out.push_str(&replacement);
    out.push_str(&text[whole.end()..]);
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize() {
        assert_eq!(normalize_ws("  SELECT\n  1 ;\n"), "SELECT 1");
    }

    #[test]
    fn grammar() {
        assert!(check_grammar("SELECT 1").is_ok());
        assert!(check_grammar("SELECT FROM").is_err());
        assert!(check_grammar("SELEC 1").is_err());
    }

    #[test]
    fn order_by_detection() {
        assert!(has_top_level_order_by("SELECT a FROM t ORDER BY a"));
        assert!(!has_top_level_order_by(
            "SELECT a FROM (SELECT a FROM t ORDER BY a) s"
        ));
        assert!(!has_top_level_order_by("SELECT a FROM t"));
    }

    #[test]
    fn hint_block_split() {
        let (h, rest) = split_hint_block("/*+\n  Rows(a b #10)\n*/\nSELECT 1");
        assert_eq!(h.unwrap().trim(), "Rows(a b #10)");
        assert_eq!(rest, "SELECT 1");
        assert_eq!(split_hint_block("SELECT 1").0, None);
    }

    #[test]
    fn cte_references() {
        let sql = "WITH a AS (SELECT 1 AS x), b AS (SELECT count(*) AS c FROM t) \
                   SELECT * FROM a JOIN b ON true JOIN a a2 ON true";
        let c = ctes(sql);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].name.as_str(), c[0].references, c[0].has_aggregate), ("a", 2, false));
        assert_eq!((c[1].name.as_str(), c[1].references, c[1].has_aggregate), ("b", 1, true));
        assert_eq!(referenced_tables(sql), vec!["t".to_string()]);
    }

    #[test]
    fn not_materialized_rewrite() {
        let sql = "WITH big(x) AS (SELECT 1) SELECT * FROM big";
        assert_eq!(
            mark_cte_not_materialized(sql, "big").unwrap(),
            "WITH big(x) AS NOT MATERIALIZED (SELECT 1) SELECT * FROM big"
        );
        assert!(mark_cte_not_materialized(sql, "nope").is_none());
        assert!(check_grammar(&mark_cte_not_materialized(sql, "big").unwrap()).is_ok());
    }
}
