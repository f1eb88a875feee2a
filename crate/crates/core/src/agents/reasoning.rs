use std::sync::OnceLock;

use regex::Regex;

use super::{AgentError, ChainNode, ReasoningChain};
use crate::db::{PlanTree, StatsSnapshot};
use crate::domain::{AgentRole, SqlQuery};
use crate::llm::AgentLlm;
use crate::membuf::MemoryBuffer;
use crate::prompt::Prompts;

fn fence() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[ \t]*([A-Za-z]*)[ \t]*\r?\n(.*?)```").unwrap())
}

fn score() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^\W*score\W*[:=]\s*(-?[0-9]+(?:\.[0-9]+)?)").unwrap())
}

fn describe(segment: &str) -> String {
    let steps: Vec<&str> = segment
        .lines()
        .map(str::trim)
        .filter_map(|l| {
            let t = l.trim_start_matches(|c: char| c == '*' || c == '-' || c == '#' || c.is_whitespace());
            t.strip_prefix("Step:").or_else(|| t.strip_prefix("step:")).map(str::trim)
        })
        .collect();
    let text = if steps.is_empty() {
        segment
            .split("\n\n")
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .last()
            .unwrap_or("")
            .to_string()
    } else {
        steps.join("; ")
    };
    text.chars().take(500).collect()
}

/// Splits a reasoning trace into nodes: each SQL fence becomes a node whose
/// proposal is the prose before it. Trailing prose with a `Step:` line
/// becomes a node without SQL.
pub fn parse_chain(trace: &str) -> Vec<ChainNode> {
    let mut nodes = Vec::new();
    let mut last = 0;
    for cap in fence().captures_iter(trace) {
        let whole = cap.get(0).unwrap();
        let tag = cap[1].to_ascii_lowercase();
        if !matches!(tag.as_str(), "" | "sql" | "postgres" | "postgresql" | "pgsql") {
            continue;
        }
        let segment = &trace[last..whole.start()];
        last = whole.end();
        let body = cap[2].trim();
        nodes.push(ChainNode {
            proposal_text: describe(segment),
            sql_candidate: SqlQuery::new(body).ok(),
            self_score: score().captures(segment).and_then(|c| c[1].parse().ok()),
        });
    }
    let tail = &trace[last..];
    if tail.to_ascii_lowercase().contains("step:") {
        nodes.push(ChainNode {
            proposal_text: describe(tail),
            sql_candidate: None,
            self_score: score().captures(tail).and_then(|c| c[1].parse().ok()),
        });
    }
    nodes
}

fn chain_from(text: &str, thinking: Option<&str>, answer: &str) -> ReasoningChain {
    let mut nodes = parse_chain(answer);
    if !nodes.iter().any(|n| n.sql_candidate.is_some()) {
        if let Some(t) = thinking {
            nodes = parse_chain(t);
        }
    }
    ReasoningChain { nodes, raw_trace: text.to_string() }
}

/// Prompts the reasoning model with the original query, its plan, the
/// statistics and, after the first iteration, the memory buffer. A chain
/// without any SQL candidate is regenerated once.
#[allow(clippy::too_many_arguments)]
pub fn reasoning_generate(
    q0: &SqlQuery,
    stats: &StatsSnapshot,
    plan: &PlanTree,
    buffer: &MemoryBuffer,
    iteration: usize,
    llm: &AgentLlm,
    prompts: &Prompts,
) -> Result<ReasoningChain, AgentError> {
    // No knowledge-base guidance on the first pass.
    let memory = if iteration == 0 || buffer.is_empty() {
        String::new()
    } else {
        format!("Context from earlier iterations:\n{}", buffer.render(AgentRole::Reasoning))
    };
    let iteration_s = iteration.to_string();
    let cost = format!("{:.2}", plan.cost().total_cost);
    let plan_s = plan.summary();
    let stats_s = stats.summary();
    let vars = [
        ("iteration", iteration_s.as_str()),
        ("query", q0.text()),
        ("cost", cost.as_str()),
        ("plan", plan_s.as_str()),
        ("stats", stats_s.as_str()),
        ("memory", memory.as_str()),
    ];
    for attempt in 0..2 {
        let reply = llm.ask(prompts.messages("reasoning", &vars))?;
        let chain = chain_from(&reply.text, reply.thinking.as_deref(), &reply.answer);
        if chain.has_candidate() {
            return Ok(chain);
        }
        tracing::warn!(attempt, "reasoning chain has no SQL candidate");
    }
    Err(AgentError::EmptyChain)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::db::{Database, StubDatabase};
    use crate::llm::{Matcher, ProviderConfig, ScriptRule, ScriptedMock, Transcript};
    use crate::membuf::SliceKind;

    fn llm(rules: Vec<ScriptRule>) -> AgentLlm {
        AgentLlm::new(Arc::new(ScriptedMock::new(rules)), ProviderConfig::default(), AgentRole::Reasoning, Transcript::new())
    }

    fn plan() -> PlanTree {
        StubDatabase::new().explain(&SqlQuery::new("SELECT 1").unwrap()).unwrap().plan
    }

    const TWO: &str = "Step: push the filter down\nScore: 40\n```sql\nSELECT a FROM t WHERE a > 1\n```\nStep: drop the duplicate predicate\n```sql\nSELECT a FROM t\n```\n";

    #[test]
    fn two_fences_two_nodes() {
        let nodes = parse_chain(TWO);
        assert_eq!(nodes.len(), 2);
        assert_eq!(nodes[0].proposal_text, "push the filter down");
        assert_eq!(nodes[0].self_score, Some(40.0));
        assert_eq!(nodes[1].self_score, None);
        assert_eq!(nodes[1].sql_candidate.as_ref().unwrap().text(), "SELECT a FROM t");
    }

    #[test]
    fn prose_only_fails_after_retry() {
        let model = llm(vec![ScriptRule::new(Matcher::contains("ROLE: reasoning"), ["I would think harder."]).repeating()]);
        let q = SqlQuery::new("SELECT 1").unwrap();
        let err = reasoning_generate(&q, &StatsSnapshot::default(), &plan(), &MemoryBuffer::default(), 0, &model, &Prompts::builtin());
        assert!(matches!(err, Err(AgentError::EmptyChain)));
        assert_eq!(model.transcript().len(), 2);
    }

    #[test]
    fn candidates_in_thinking_are_used() {
        let model = llm(vec![ScriptRule::new(
            Matcher::contains("ROLE: reasoning"),
            ["<think>Step: use a CTE\n```sql\nWITH x AS (SELECT 1) SELECT * FROM x\n```</think>Done."],
        )]);
        let q = SqlQuery::new("SELECT 1").unwrap();
        let chain = reasoning_generate(&q, &StatsSnapshot::default(), &plan(), &MemoryBuffer::default(), 0, &model, &Prompts::builtin()).unwrap();
        assert!(chain.nodes[0].sql_candidate.as_ref().unwrap().text().starts_with("WITH"));
    }

    #[test]
    fn first_iteration_prompt_has_no_knowledge() {
        let mut buffer = MemoryBuffer::default();
        buffer.put(SliceKind::RetrievedKnowledge, "KB-MARKER", 0);
        let model = llm(vec![ScriptRule::new(Matcher::contains("ROLE: reasoning"), [TWO]).repeating()]);
        let q = SqlQuery::new("SELECT 1").unwrap();
        let p = Prompts::builtin();
        reasoning_generate(&q, &StatsSnapshot::default(), &plan(), &buffer, 0, &model, &p).unwrap();
        reasoning_generate(&q, &StatsSnapshot::default(), &plan(), &buffer, 1, &model, &p).unwrap();
        let e = model.transcript().entries();
        assert!(!e[0].messages[1].content.contains("KB-MARKER"));
        assert!(e[1].messages[1].content.contains("KB-MARKER"));
    }
}
