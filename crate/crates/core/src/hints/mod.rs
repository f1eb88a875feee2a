//! pg_hint_plan hints: the fixed hint base, rendering, parsing and injection.

mod analyze;
mod select;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::analyze::{analyze_plan, heuristic_suggestions, HintConfig, Suggestion};
pub use self::select::{probe, select_hints, HintProbe, Selection};

use crate::domain::SqlQuery;
use crate::sqltext;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HintError {
    #[error("invalid hint {hint}: {reason}")]
    InvariantViolation { hint: String, reason: String },
    #[error("query already carries a hint block")]
    AlreadyHinted,
    #[error("cannot parse hint block: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HintKind {
    NoHashJoin,
    NoNestLoop,
    NoMergeJoin,
    Rows,
    NoMaterialize,
}

impl HintKind {
    pub const ALL: [HintKind; 5] = [
        HintKind::NoHashJoin,
        HintKind::NoNestLoop,
        HintKind::NoMergeJoin,
        HintKind::Rows,
        HintKind::NoMaterialize,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            HintKind::NoHashJoin => "NoHashJoin",
            HintKind::NoNestLoop => "NoNestLoop",
            HintKind::NoMergeJoin => "NoMergeJoin",
            HintKind::Rows => "Rows",
            HintKind::NoMaterialize => "NO_MATERIALIZE",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        HintKind::ALL.into_iter().find(|k| k.keyword().eq_ignore_ascii_case(word))
    }

    pub fn is_join_veto(self) -> bool {
        matches!(self, HintKind::NoHashJoin | HintKind::NoNestLoop | HintKind::NoMergeJoin)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hint {
    pub kind: HintKind,
    /// Relation aliases, or the CTE name for NO_MATERIALIZE.
    pub tables: Vec<String>,
    pub row_value: Option<u64>,
    #[serde(default)]
    pub justification: String,
}

fn ident() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_$]*$").unwrap())
}

impl Hint {
    pub fn join_veto(kind: HintKind, tables: &[&str], justification: &str) -> Self {
        Hint {
            kind,
            tables: tables.iter().map(|t| t.to_string()).collect(),
            row_value: None,
            justification: justification.into(),
        }
    }

    pub fn rows(tables: &[&str], rows: u64, justification: &str) -> Self {
        Hint {
            kind: HintKind::Rows,
            tables: tables.iter().map(|t| t.to_string()).collect(),
            row_value: Some(rows),
            justification: justification.into(),
        }
    }

    pub fn no_materialize(cte: &str, justification: &str) -> Self {
        Hint {
            kind: HintKind::NoMaterialize,
            tables: vec![cte.to_string()],
            row_value: None,
            justification: justification.into(),
        }
    }

    pub fn validate(&self) -> Result<(), HintError> {
        let fail = |reason: &str| {
            Err(HintError::InvariantViolation { hint: self.to_string(), reason: reason.into() })
        };
        if self.tables.is_empty() {
            return fail("names no relation");
        }
        if let Some(t) = self.tables.iter().find(|t| !ident().is_match(t)) {
            return fail(&format!("\"{t}\" is not a plain identifier"));
        }
        match self.kind {
            HintKind::NoMaterialize if self.tables.len() != 1 => fail("must name exactly one CTE"),
            k if (k.is_join_veto() || k == HintKind::Rows) && self.tables.len() < 2 => {
                fail("needs at least two relations")
            }
            HintKind::Rows if self.row_value.unwrap_or(0) == 0 => fail("needs a positive row count"),
            k if k != HintKind::Rows && self.row_value.is_some() => fail("only Rows carries a row count"),
            _ => Ok(()),
        }
    }

    fn table_set(&self) -> BTreeSet<String> {
        self.tables.iter().map(|t| t.to_ascii_lowercase()).collect()
    }
}

impl fmt::Display for Hint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}", self.kind.keyword(), self.tables.join(" "))?;
        if let Some(n) = self.row_value {
            write!(f, " #{n}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintSet {
    pub hints: Vec<Hint>,
}

impl HintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.hints.is_empty()
    }

    pub fn len(&self) -> usize {
        self.hints.len()
    }

    /// Adds a hint unless it breaks the set's invariants.
    pub fn push(&mut self, hint: Hint) -> Result<(), HintError> {
        hint.validate()?;
        let set = hint.table_set();
        let reject = |reason: &str| Err(HintError::InvariantViolation { hint: hint.to_string(), reason: reason.into() });
        if self.hints.iter().any(|h| h.kind == hint.kind && h.table_set() == set) {
            return reject("duplicates an existing hint");
        }
        if hint.kind.is_join_veto() {
            let vetoed = self
                .hints
                .iter()
                .filter(|h| h.kind.is_join_veto() && h.table_set() == set)
                .count();
            if vetoed == 2 {
                return reject("would forbid every join method for these relations");
            }
        }
        self.hints.push(hint);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HintError> {
        let mut rebuilt = HintSet::new();
        for h in &self.hints {
            rebuilt.push(h.clone())?;
        }
        Ok(())
    }

    /// Same hints in the same order, ignoring justifications.
    pub fn same_hints(&self, other: &HintSet) -> bool {
        self.hints.len() == other.hints.len()
            && self.hints.iter().zip(&other.hints).all(|(a, b)| a.to_string() == b.to_string())
    }

    pub fn without_kind(&self, kind: HintKind) -> HintSet {
        HintSet { hints: self.hints.iter().filter(|h| h.kind != kind).cloned().collect() }
    }
}

/// `/*+\n  <hint>\n  <hint>\n*/`, or the empty string for an empty set.
pub fn render(hs: &HintSet) -> Result<String, HintError> {
    hs.validate()?;
    if hs.is_empty() {
        return Ok(String::new());
    }
    let mut out = String::from("/*+\n");
    for h in &hs.hints {
        out.push_str("  ");
        out.push_str(&h.to_string());
        out.push('\n');
    }
    out.push_str("*/");
    Ok(out)
}

fn hint_call() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"([A-Za-z_]+)\s*\(([^()]*)\)").unwrap())
}

/// Reads a hint block (with or without the comment delimiters).
pub fn parse(block: &str) -> Result<HintSet, HintError> {
    let body = match sqltext::split_hint_block(block) {
        (Some(inner), _) => inner,
        (None, rest) => rest,
    };
    let mut hs = HintSet::new();
    let mut consumed = String::new();
    for cap in hint_call().captures_iter(body) {
        consumed.push_str(&cap[0]);
        let kind = HintKind::from_keyword(&cap[1]).ok_or_else(|| HintError::Parse(format!("unknown hint {}", &cap[1])))?;
        let mut tables = Vec::new();
        let mut row_value = None;
        for tok in cap[2].split_whitespace() {
            match tok.strip_prefix('#') {
                Some(n) if kind == HintKind::Rows => {
                    row_value = Some(n.parse().map_err(|_| HintError::Parse(format!("bad row count {tok}")))?)
                }
                Some(_) => return Err(HintError::Parse(format!("row count in {}", kind.keyword()))),
                None => tables.push(tok.to_string()),
            }
        }
        hs.push(Hint { kind, tables, row_value, justification: String::new() })?;
    }
    let leftover = hint_call().replace_all(body, "");
    if !leftover.trim().is_empty() {
        return Err(HintError::Parse(format!("unexpected text {:?}", leftover.trim())));
    }
    Ok(hs)
}

/// How NO_MATERIALIZE reaches the server.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterializeMode {
    /// Emit `NO_MATERIALIZE(name)` in the hint block.
    Hint,
    /// Rewrite the CTE as `name AS NOT MATERIALIZED (...)`; stock
    /// pg_hint_plan does not know the hint.
    #[default]
    Compat,
}

/// Prepends the rendered block. An empty set leaves the query untouched.
pub fn inject(q: &SqlQuery, hs: &HintSet) -> Result<SqlQuery, HintError> {
    if sqltext::split_hint_block(q.text()).0.is_some() {
        return Err(HintError::AlreadyHinted);
    }
    let block = render(hs)?;
    if block.is_empty() {
        return Ok(q.clone());
    }
    Ok(SqlQuery::new(format!("{block}\n{}", q.text())).expect("non-empty"))
}

/// `inject`, with NO_MATERIALIZE realized according to `mode`.
pub fn inject_with(q: &SqlQuery, hs: &HintSet, mode: MaterializeMode) -> Result<SqlQuery, HintError> {
    if mode == MaterializeMode::Hint {
        return inject(q, hs);
    }
    if sqltext::split_hint_block(q.text()).0.is_some() {
        return Err(HintError::AlreadyHinted);
    }
    hs.validate()?;
    let mut text = q.text().to_string();
    for h in hs.hints.iter().filter(|h| h.kind == HintKind::NoMaterialize) {
        text = sqltext::mark_cte_not_materialized(&text, &h.tables[0]).ok_or_else(|| HintError::InvariantViolation {
            hint: h.to_string(),
            reason: "no such CTE in the query".into(),
        })?;
    }
    inject(&SqlQuery::new(text).expect("non-empty"), &hs.without_kind(HintKind::NoMaterialize))
}
