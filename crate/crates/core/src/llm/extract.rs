use crate::domain::SqlQuery;
use crate::sqltext;

const LEADING_KEYWORDS: [&str; 5] = ["SELECT", "WITH", "INSERT", "UPDATE", "DELETE"];

fn fenced_blocks(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let Some(nl) = after.find('\n') else { break };
        let lang = after[..nl].trim().to_ascii_lowercase();
        let body = &after[nl + 1..];
        let Some(close) = body.find("```") else { break };
        if lang.is_empty() || matches!(lang.as_str(), "sql" | "postgres" | "postgresql" | "pgsql" | "psql") {
            let block: Vec<&str> = body[..close]
                .lines()
                .filter(|l| !l.trim().is_empty())
                .collect();
            let block = block.join("\n").trim().to_string();
            if !block.is_empty() {
                out.push(block);
            }
        }
        rest = &body[close + 3..];
    }
    out
}

fn starts_with_keyword(line: &str) -> Option<&'static str> {
    let t = line.trim_start();
    LEADING_KEYWORDS.iter().copied().find(|kw| {
        t.len() >= kw.len()
            && t[..kw.len()].eq_ignore_ascii_case(kw)
            && t[kw.len()..]
                .chars()
                .next()
                .is_none_or(|c| c.is_whitespace() || c == '(' || c == '*')
    })
}

fn keyword_scan(text: &str) -> Vec<String> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let Some(kw) = starts_with_keyword(lines[i]) else {
            i += 1;
            continue;
        };
        let upper_kw = lines[i].trim_start().starts_with(kw);
        let mut stmt: Vec<&str> = Vec::new();
        let mut j = i;
        while j < lines.len() {
            let line = lines[j];
            if line.trim().is_empty() {
                break;
            }
            if let Some(semi) = line.find(';') {
                stmt.push(&line[..=semi]);
                j += 1;
                break;
            }
            stmt.push(line);
            j += 1;
        }
        let candidate = stmt.join("\n").trim().to_string();
        // Prose such as "Select the cheapest plan" must not be taken for SQL.
        if upper_kw || sqltext::check_grammar(&candidate).is_ok() {
            out.push(candidate);
        }
        i = j.max(i + 1);
    }
    out
}

/// Every SQL statement in a free-form model response: fenced code blocks in
/// document order, or when there are none, statements found by a
/// leading-keyword scan.
pub fn extract_sql(response: &str) -> Vec<SqlQuery> {
    let mut found = fenced_blocks(response);
    if found.is_empty() {
        found = keyword_scan(response);
    }
    found.into_iter().filter_map(|s| SqlQuery::new(s).ok()).collect()
}
