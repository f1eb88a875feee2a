//! Structured knowledge base of rewrite Q&A pairs with BM25 retrieval.

pub mod bm25;
mod embed;
mod pipeline;

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::bm25::{tokenize, Bm25Index};
pub use self::embed::{cosine, DocIndex, DocPoint, EmbedError, Embedder, HashingEmbedder};
pub use self::pipeline::{
    categorize_text, classify, classify_heuristic, enhance, filter, ingest, Dropped, Enhanced, FilterReport,
    IngestReport, RawAnswer, RawUnit, read_units,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 3;

const FIXTURE: &str = include_str!("../../data/kb_fixture.jsonl");

#[derive(Debug, Error)]
pub enum KbError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported schema version {found}")]
    Schema { line: usize, found: u32 },
    #[error("entry {id}: {message}")]
    Invalid { id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    JoinOptimization,
    ConstantFolding,
    PredicateSimplification,
    Other,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::JoinOptimization,
        Category::ConstantFolding,
        Category::PredicateSimplification,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::JoinOptimization => "join_optimization",
            Category::ConstantFolding => "constant_folding",
            Category::PredicateSimplification => "predicate_simplification",
            Category::Other => "other",
        }
    }

    /// Finds a category name anywhere in free text, tolerating spaces or
    /// hyphens in place of underscores.
    pub fn find_in(text: &str) -> Option<Category> {
        let t = text.to_lowercase().replace([' ', '-'], "_");
        Category::ALL
            .into_iter()
            .filter(|c| *c != Category::Other)
            .find(|c| t.contains(c.as_str()))
            .or_else(|| t.contains("other").then_some(Category::Other))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    OfficialDocs,
    Community,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text_que: String,
    pub sql_que: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text_ans: String,
    pub sql_ans: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quality {
    pub likes: u32,
    pub dislikes: u32,
    pub consensus: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbEntry {
    pub id: String,
    pub question: Question,
    pub answer: Answer,
    pub category: Category,
    pub provenance: Provenance,
    pub quality: Quality,
    /// Source discussion, shared by all answers of one unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

impl KbEntry {
    pub fn validate(&self) -> Result<(), KbError> {
        let halves = [
            ("text_que", &self.question.text_que),
            ("sql_que", &self.question.sql_que),
            ("text_ans", &self.answer.text_ans),
            ("sql_ans", &self.answer.sql_ans),
        ];
        for (name, v) in halves {
            if v.trim().is_empty() {
                return Err(KbError::Invalid {
                    id: self.id.clone(),
                    message: format!("{name} is empty"),
                });
            }
        }
        Ok(())
    }

    /// The text BM25 sees: question prose plus question SQL.
    pub fn indexed_text(&self) -> String {
        format!("{} {}", self.question.text_que, self.question.sql_que)
    }

    /// Compact form used inside prompts.
    pub fn render(&self) -> String {
        format!(
            "- [{}] ({}) {}\n  strategy: {}\n  before: {}\n  after: {}\n",
            self.id,
            self.category,
            self.question.text_que,
            self.answer.text_ans,
            self.question.sql_que,
            self.answer.sql_ans
        )
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    schema_version: u32,
    #[serde(flatten)]
    entry: KbEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrieveOptions {
    pub k: usize,
    pub category: Option<Category>,
    /// Leave out documents that share no term with the query.
    pub drop_zero: bool,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            category: None,
            drop_zero: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored<'a> {
    pub entry: &'a KbEntry,
    pub score: f64,
}

/// Entries plus the index built over them. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    entries: Vec<KbEntry>,
    index: Bm25Index,
}

impl Corpus {
    pub fn new(entries: Vec<KbEntry>) -> Self {
        let docs: Vec<String> = entries.iter().map(KbEntry::indexed_text).collect();
        let index = Bm25Index::build(&docs);
        Self { entries, index }
    }

    /// The bundled corpus of rewrite strategies.
    pub fn fixture() -> Self {
        Self::from_jsonl(FIXTURE).expect("bundled corpus is valid")
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&KbEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }

    /// Top-k entries by BM25 score, ties broken by ascending id.
    pub fn retrieve(&self, query: &str, opts: &RetrieveOptions) -> Vec<Scored<'_>> {
        let scores = self.index.scores(query);
        let mut hits: Vec<Scored<'_>> = self
            .entries
            .iter()
            .zip(scores)
            .filter(|(e, s)| opts.category.is_none_or(|c| e.category == c) && !(opts.drop_zero && *s <= 0.0))
            .map(|(entry, score)| Scored { entry, score })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.entry.id.cmp(&b.entry.id)));
        hits.truncate(opts.k);
        hits
    }

    pub fn from_jsonl(text: &str) -> Result<Self, KbError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(parse_line(i + 1, line)?);
        }
        Ok(Self::new(entries))
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if !line.trim().is_empty() {
                entries.push(parse_line(i + 1, &line)?);
            }
        }
        Ok(Self::new(entries))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let line = Line {
                schema_version: SCHEMA_VERSION,
                entry: e.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

fn parse_line(line: usize, text: &str) -> Result<KbEntry, KbError> {
    let parsed: Line = serde_json::from_str(text).map_err(|e| KbError::Parse {
        line,
        message: e.to_string(),
    })?;
    if parsed.schema_version != SCHEMA_VERSION {
        return Err(KbError::Schema {
            line,
            found: parsed.schema_version,
        });
    }
    parsed.entry.validate()?;
    Ok(parsed.entry)
}

#[cfg(test)]
pub(crate) fn entry(id: &str, text: &str, category: Category) -> KbEntry {
    KbEntry {
        id: id.into(),
        question: Question {
            text_que: text.into(),
            sql_que: "SELECT 1".into(),
        },
        answer: Answer {
            text_ans: "answer".into(),
            sql_ans: "SELECT 1".into(),
        },
        category,
        provenance: Provenance::Fixture,
        quality: Quality::default(),
        unit: None,
        summary: None,
    }
}
