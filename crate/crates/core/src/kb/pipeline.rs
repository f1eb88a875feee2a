//! Offline corpus construction: ingest, filter, enhance, classify.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::{DocIndex, Embedder};
use super::{Answer, Category, KbEntry, KbError, Provenance, Quality, Question};
use crate::llm::AgentLlm;
use crate::prompt::Prompts;

/// One answer of a collected Q&A unit, with its votes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAnswer {
    pub text: String,
    pub sql: String,
    #[serde(default)]
    pub likes: u32,
    #[serde(default)]
    pub dislikes: u32,
}

/// A Q&A unit as collected from documentation or a forum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawUnit {
    pub id: String,
    pub question: String,
    pub sql: String,
    #[serde(default)]
    pub answers: Vec<RawAnswer>,
    #[serde(default = "default_source")]
    pub source: Provenance,
}

fn default_source() -> Provenance {
    Provenance::Community
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub entries: Vec<KbEntry>,
    /// `(unit id or position, reason)` for every unit not ingested.
    pub skipped: Vec<(String, String)>,
}

/// One candidate entry per answer. Units without answers, and units that do
/// not parse, are skipped and logged.
pub fn ingest(raw: &[serde_json::Value]) -> IngestReport {
    let mut report = IngestReport::default();
    for (pos, value) in raw.iter().enumerate() {
        let unit: RawUnit = match serde_json::from_value(value.clone()) {
            Ok(u) => u,
            Err(e) => {
                let id = value
                    .get("id")
                    .and_then(|v| v.as_str())
                    .map_or_else(|| format!("#{pos}"), str::to_string);
                tracing::warn!(unit = %id, error = %e, "malformed unit skipped");
                report.skipped.push((id, format!("malformed: {e}")));
                continue;
            }
        };
        if unit.answers.is_empty() {
            report.skipped.push((unit.id.clone(), "no answers".into()));
            continue;
        }
        for (i, a) in unit.answers.iter().enumerate() {
            let entry = KbEntry {
                id: format!("{}-a{}", unit.id, i + 1),
                question: Question {
                    text_que: unit.question.clone(),
                    sql_que: unit.sql.clone(),
                },
                answer: Answer {
                    text_ans: a.text.clone(),
                    sql_ans: a.sql.clone(),
                },
                category: Category::Other,
                provenance: unit.source,
                quality: Quality {
                    likes: a.likes,
                    dislikes: a.dislikes,
                    consensus: false,
                },
                unit: Some(unit.id.clone()),
                summary: None,
            };
            match entry.validate() {
                Ok(()) => report.entries.push(entry),
                Err(e) => {
                    tracing::warn!(unit = %unit.id, error = %e, "malformed answer skipped");
                    report.skipped.push((entry.id, format!("malformed: {e}")));
                }
            }
        }
    }
    report
}

/// Reads `*.json` (one unit or an array of units) and `*.jsonl` files from
/// `dir`, in file-name order.
pub fn read_units(dir: &Path) -> Result<Vec<serde_json::Value>, KbError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "jsonl")))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(&path)?;
        if path.extension().is_some_and(|e| e == "jsonl") {
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                match serde_json::from_str(line) {
                    Ok(v) => out.push(v),
                    Err(e) => {
                        tracing::warn!(file = %path.display(), line = i + 1, error = %e, "unparseable line");
                        out.push(serde_json::Value::Null);
                    }
                }
            }
        } else {
            match serde_json::from_str::<serde_json::Value>(&text) {
                Ok(serde_json::Value::Array(items)) => out.extend(items),
                Ok(v) => out.push(v),
                Err(e) => {
                    tracing::warn!(file = %path.display(), error = %e, "unparseable file");
                    out.push(serde_json::Value::Null);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dropped {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterReport {
    pub kept: Vec<KbEntry>,
    pub dropped: Vec<Dropped>,
}

pub const VOTES: usize = 3;

fn net(e: &KbEntry) -> i64 {
    i64::from(e.quality.likes) - i64::from(e.quality.dislikes)
}

fn yes_no(text: &str) -> Option<bool> {
    text.split(|c: char| !c.is_alphabetic())
        .find_map(|w| match w.to_ascii_uppercase().as_str() {
            "YES" => Some(true),
            "NO" => Some(false),
            _ => None,
        })
}

fn first_number(text: &str) -> Option<usize> {
    text.split(|c: char| !c.is_ascii_digit())
        .find(|w| !w.is_empty())
        .and_then(|w| w.parse().ok())
}

fn numbered_answers(group: &[KbEntry]) -> String {
    group
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{}. {}\n```sql\n{}\n```\n", i + 1, e.answer.text_ans, e.answer.sql_ans))
        .collect()
}

/// Picks the answer to keep from a multi-answer unit. Returns the index and
/// whether the discussion reached consensus.
fn choose(group: &[KbEntry], llm: Option<(&AgentLlm, &Prompts)>) -> Result<(usize, bool), String> {
    let by_votes = || {
        (0..group.len())
            .max_by(|&a, &b| net(&group[a]).cmp(&net(&group[b])).then(b.cmp(&a)))
            .unwrap_or(0)
    };
    let Some((llm, prompts)) = llm else {
        return Ok((by_votes(), false));
    };
    let answers = numbered_answers(group);
    let vars = [("question", group[0].question.text_que.as_str()), ("answers", answers.as_str())];
    let reply = llm
        .ask(prompts.messages("consensus", &vars))
        .map_err(|e| format!("consensus check failed: {e}"))?;
    if yes_no(&reply.answer) != Some(true) {
        return Ok((by_votes(), false));
    }
    let mut tally = vec![0usize; group.len()];
    for _ in 0..VOTES {
        let vote = llm
            .ask(prompts.messages("vote", &vars))
            .map_err(|e| format!("majority vote failed: {e}"))?;
        if let Some(n) = first_number(&vote.answer).filter(|n| (1..=group.len()).contains(n)) {
            tally[n - 1] += 1;
        }
    }
    if tally.iter().all(|&t| t == 0) {
        return Ok((by_votes(), true));
    }
    let best = (0..group.len())
        .max_by(|&a, &b| {
            tally[a]
                .cmp(&tally[b])
                .then(net(&group[a]).cmp(&net(&group[b])))
                .then(b.cmp(&a))
        })
        .unwrap_or(0);
    Ok((best, true))
}

/// Drops answers with more dislikes than likes, then keeps one answer per
/// multi-answer unit: the majority-vote winner when the model sees consensus,
/// otherwise the best-voted answer. Without a model only the vote counts are
/// used. A provider error drops that unit only.
pub fn filter(candidates: Vec<KbEntry>, llm: Option<(&AgentLlm, &Prompts)>) -> FilterReport {
    let mut report = FilterReport::default();
    let mut groups: BTreeMap<String, Vec<KbEntry>> = BTreeMap::new();
    let mut order = Vec::new();
    for e in candidates {
        if e.quality.dislikes > e.quality.likes {
            report.dropped.push(Dropped {
                id: e.id,
                reason: format!("more dislikes ({}) than likes ({})", e.quality.dislikes, e.quality.likes),
            });
            continue;
        }
        let key = e.unit.clone().unwrap_or_else(|| e.id.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(e);
    }
    for key in order {
        let group = groups.remove(&key).unwrap_or_default();
        if group.len() == 1 {
            report.kept.extend(group);
            continue;
        }
        match choose(&group, llm) {
            Ok((best, consensus)) => {
                for (i, mut e) in group.into_iter().enumerate() {
                    if i == best {
                        e.quality.consensus = consensus;
                        report.kept.push(e);
                    } else {
                        let reason = if consensus { "lost the majority vote" } else { "lower-voted answer of the same unit" };
                        report.dropped.push(Dropped { id: e.id, reason: reason.into() });
                    }
                }
            }
            Err(reason) => {
                tracing::warn!(unit = %key, %reason, "unit dropped");
                for e in group {
                    report.dropped.push(Dropped { id: e.id, reason: reason.clone() });
                }
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub entry: KbEntry,
    pub appended: Vec<String>,
    /// Why enhancement stopped early, if it did.
    pub flagged: Option<String>,
}

pub const DOC_TOP_K: usize = 3;
pub const NOTES_HEADER: &str = "\n\nDocumentation notes:";

/// Summarizes the entry, finds the closest documentation points and appends
/// the ones the model confirms to the answer text.
pub fn enhance(
    entry: KbEntry,
    docs: &DocIndex,
    embedder: &dyn Embedder,
    llm: &AgentLlm,
    prompts: &Prompts,
) -> Enhanced {
    let mut entry = entry;
    let vars = [
        ("question", entry.question.text_que.as_str()),
        ("question_sql", entry.question.sql_que.as_str()),
        ("answer", entry.answer.text_ans.as_str()),
        ("answer_sql", entry.answer.sql_ans.as_str()),
    ];
    let summary = match llm.ask(prompts.messages("summarize", &vars)) {
        Ok(c) => c.answer.trim().to_string(),
        Err(e) => return Enhanced { entry, appended: vec![], flagged: Some(format!("summary failed: {e}")) },
    };
    entry.summary = Some(summary.clone());
    if docs.is_empty() {
        return Enhanced { entry, appended: vec![], flagged: None };
    }
    let vector = match embedder.embed(&summary) {
        Ok(v) => v,
        Err(e) => return Enhanced { entry, appended: vec![], flagged: Some(e.to_string()) },
    };
    let top = docs.top_k(&vector, DOC_TOP_K);
    let listing: String = top
        .iter()
        .enumerate()
        .map(|(i, (p, _))| format!("{}. {}\n", i + 1, p.text))
        .collect();
    let reply = match llm.ask(prompts.messages("confirm", &[("summary", &summary), ("points", &listing)])) {
        Ok(c) => c.answer,
        Err(e) => return Enhanced { entry, appended: vec![], flagged: Some(format!("confirmation failed: {e}")) },
    };
    let confirmed = parse_confirmed(&reply, top.len());
    let appended: Vec<String> = confirmed.iter().map(|&i| top[i].0.text.clone()).collect();
    if !appended.is_empty() {
        entry.answer.text_ans.push_str(NOTES_HEADER);
        for p in &appended {
            entry.answer.text_ans.push_str("\n- ");
            entry.answer.text_ans.push_str(p);
        }
    }
    Enhanced { entry, appended, flagged: None }
}

/// Zero-based indices listed after `CONFIRMED:`, deduplicated, in range.
fn parse_confirmed(reply: &str, n: usize) -> Vec<usize> {
    let upper = reply.to_ascii_uppercase();
    let Some(pos) = upper.find("CONFIRMED:") else { return vec![] };
    let line = upper[pos + 10..].lines().next().unwrap_or("");
    let mut out = Vec::new();
    for w in line.split(|c: char| !c.is_ascii_digit()).filter(|w| !w.is_empty()) {
        if let Ok(k) = w.parse::<usize>() {
            if (1..=n).contains(&k) && !out.contains(&(k - 1)) {
                out.push(k - 1);
            }
        }
    }
    out
}

const JOIN_WORDS: &[&str] = &["join", "semi-join", "anti-join", "exists"];
const CONST_WORDS: &[&str] = &["constant", "fold", "arithmetic", "literal", "precompute", "expression on the column"];
const PRED_WORDS: &[&str] = &["where", "predicate", "1=1", "1 = 1", "tautolog", "condition", "simplif", "redundant filter"];

fn count(text: &str, words: &[&str]) -> usize {
    words.iter().map(|w| text.matches(w).count()).sum()
}

/// Keyword classification of free text. The category with the most keyword
/// hits wins; ties go to join, then constant folding, then predicates. No hit
/// at all means `Other`.
pub fn categorize_text(text: &str) -> Category {
    let text = text.to_lowercase();
    let counts = [
        (Category::JoinOptimization, count(&text, JOIN_WORDS)),
        (Category::ConstantFolding, count(&text, CONST_WORDS)),
        (Category::PredicateSimplification, count(&text, PRED_WORDS)),
    ];
    counts
        .iter()
        .filter(|(_, n)| *n > 0)
        .fold(None::<(Category, usize)>, |best, &(c, n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((c, n)),
        })
        .map_or(Category::Other, |(c, _)| c)
}

/// Keyword classification over the prose halves of an entry.
pub fn classify_heuristic(entry: &KbEntry) -> Category {
    categorize_text(&format!("{} {}", entry.question.text_que, entry.answer.text_ans))
}

/// Asks the model for a category; an unparseable answer is `Other`. Without a
/// model, or when the call fails, the keyword heuristic decides.
pub fn classify(entry: &KbEntry, llm: Option<(&AgentLlm, &Prompts)>) -> Category {
    let Some((llm, prompts)) = llm else {
        return classify_heuristic(entry);
    };
    let vars = [
        ("question", entry.question.text_que.as_str()),
        ("answer", entry.answer.text_ans.as_str()),
    ];
    match llm.ask(prompts.messages("classify", &vars)) {
        Ok(c) => Category::find_in(&c.answer).unwrap_or(Category::Other),
        Err(e) => {
            tracing::warn!(entry = %entry.id, error = %e, "classification call failed; using keywords");
            classify_heuristic(entry)
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use serde_json::json;

    use super::*;
    use crate::domain::AgentRole;
    use crate::kb::embed::{DocPoint, EmbedError, HashingEmbedder};
    use crate::llm::{Matcher, ProviderConfig, ScriptRule, ScriptedMock, Transcript};

    fn llm(rules: Vec<ScriptRule>) -> AgentLlm {
        AgentLlm::new(
            Arc::new(ScriptedMock::new(rules)),
            ProviderConfig::default(),
            AgentRole::Knowledge,
            Transcript::new(),
        )
    }

    fn unit(id: &str, answers: &[(u32, u32)]) -> serde_json::Value {
        json!({
            "id": id,
            "question": "How to speed up this join?",
            "sql": "SELECT * FROM a JOIN b ON a.id = b.id",
            "answers": answers.iter().enumerate().map(|(i, (l, d))| json!({
                "text": format!("answer {i}"), "sql": format!("SELECT {i}"), "likes": l, "dislikes": d
            })).collect::<Vec<_>>(),
        })
    }

    #[test]
    fn ingest_counts() {
        let r = ingest(&[unit("u1", &[(5, 0)])]);
        assert_eq!(r.entries.len(), 1);
        let r = ingest(&[unit("u0", &[])]);
        assert!(r.entries.is_empty());
        assert_eq!(r.skipped[0].1, "no answers");
        let r = ingest(&[unit("a", &[(1, 0)]), unit("b", &[(1, 0)]), json!({"id": "bad"}), unit("c", &[(1, 0)])]);
        assert_eq!(r.entries.len(), 3);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].0, "bad");
    }

    #[test]
    fn filter_vote_rule() {
        let r = ingest(&[unit("x", &[(2, 5)]), unit("y", &[(0, 0)])]);
        let f = filter(r.entries, None);
        assert_eq!(f.kept.len(), 1);
        assert_eq!(f.kept[0].id, "y-a1");
        assert_eq!(f.dropped[0].id, "x-a1");
    }

    #[test]
    fn majority_vote_selects_b() {
        let r = ingest(&[unit("m", &[(3, 0), (1, 0), (2, 0)])]);
        let model = llm(vec![
            ScriptRule::new(Matcher::contains("ROLE: consensus"), ["YES"]),
            ScriptRule::new(Matcher::contains("ROLE: vote"), ["2", "Answer 2 is best", "1"]),
        ]);
        let p = Prompts::builtin();
        let f = filter(r.entries, Some((&model, &p)));
        assert_eq!(f.kept.len(), 1);
        assert_eq!(f.kept[0].id, "m-a2");
        assert!(f.kept[0].quality.consensus);
        assert_eq!(f.dropped.len(), 2);
        assert_eq!(model.transcript().len(), 4);
    }

    #[test]
    fn provider_error_drops_only_that_unit() {
        let r = ingest(&[unit("m", &[(3, 0), (1, 0)]), unit("s", &[(1, 0)])]);
        let model = llm(vec![]);
        let p = Prompts::builtin();
        let f = filter(r.entries, Some((&model, &p)));
        assert_eq!(f.kept.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["s-a1"]);
        assert_eq!(f.dropped.len(), 2);
    }

    fn sample() -> KbEntry {
        ingest(&[unit("e", &[(1, 0)])]).entries.remove(0)
    }

    #[test]
    fn enhance_with_no_docs_only_summarizes() {
        let model = llm(vec![ScriptRule::new(Matcher::contains("ROLE: summarize"), ["Join rewrite."])]);
        let e = enhance(sample(), &DocIndex::default(), &HashingEmbedder::default(), &model, &Prompts::builtin());
        assert_eq!(e.entry.summary.as_deref(), Some("Join rewrite."));
        assert_eq!(e.entry.answer, sample().answer);
    }

    #[test]
    fn enhance_rejects_all_points() {
        let emb = HashingEmbedder::default();
        let docs = DocIndex::build(
            (0..4).map(|i| DocPoint { id: format!("p{i}"), text: format!("join point {i}") }).collect(),
            &emb,
        )
        .unwrap();
        let model = llm(vec![
            ScriptRule::new(Matcher::contains("ROLE: summarize"), ["join rewrite"]),
            ScriptRule::new(Matcher::contains("ROLE: confirm"), ["CONFIRMED: NONE"]),
        ]);
        let e = enhance(sample(), &docs, &emb, &model, &Prompts::builtin());
        assert!(e.appended.is_empty());
        assert!(!e.entry.answer.text_ans.contains(NOTES_HEADER));
    }

    #[test]
    fn enhance_appends_confirmed_points() {
        let emb = HashingEmbedder::default();
        let docs = DocIndex::build(
            vec![
                DocPoint { id: "a".into(), text: "join rewrite".into() },
                DocPoint { id: "b".into(), text: "unrelated vacuum".into() },
            ],
            &emb,
        )
        .unwrap();
        let model = llm(vec![
            ScriptRule::new(Matcher::contains("ROLE: summarize"), ["join rewrite"]),
            ScriptRule::new(Matcher::contains("ROLE: confirm"), ["CONFIRMED: 1"]),
        ]);
        let e = enhance(sample(), &docs, &emb, &model, &Prompts::builtin());
        assert_eq!(e.appended, vec!["join rewrite".to_string()]);
        assert!(e.entry.answer.text_ans.ends_with("- join rewrite"));
    }

    struct Broken;
    impl Embedder for Broken {
        fn embed(&self, _: &str) -> Result<Vec<f32>, EmbedError> {
            Err(EmbedError("down".into()))
        }
    }

    #[test]
    fn embedder_failure_flags_entry() {
        let docs = DocIndex::build(vec![DocPoint { id: "a".into(), text: "x".into() }], &HashingEmbedder::default()).unwrap();
        let model = llm(vec![ScriptRule::new(Matcher::contains("ROLE: summarize"), ["s"])]);
        let e = enhance(sample(), &docs, &Broken, &model, &Prompts::builtin());
        assert!(e.flagged.is_some());
        assert_eq!(e.entry.answer, sample().answer);
    }

    #[test]
    fn heuristic_categories() {
        let mut e = sample();
        e.question.text_que = "Eliminating a redundant join".into();
        e.answer.text_ans = "Drop the join to dept".into();
        assert_eq!(classify_heuristic(&e), Category::JoinOptimization);
        e.question.text_que = "WHERE 1=1 removal".into();
        e.answer.text_ans = "The predicate is always true".into();
        assert_eq!(classify_heuristic(&e), Category::PredicateSimplification);
        e.question.text_que = "x".into();
        e.answer.text_ans = "y".into();
        assert_eq!(classify_heuristic(&e), Category::Other);
    }

    #[test]
    fn unparseable_llm_category_is_other() {
        let model = llm(vec![ScriptRule::new(Matcher::contains("ROLE: classify"), ["no idea"])]);
        assert_eq!(classify(&sample(), Some((&model, &Prompts::builtin()))), Category::Other);
    }

    #[test]
    fn fixture_categories_match_heuristic() {
        for e in crate::kb::Corpus::fixture().entries() {
            assert_eq!(classify_heuristic(e), e.category, "{}", e.id);
        }
    }
}
