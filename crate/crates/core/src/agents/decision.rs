use std::collections::BTreeMap;

use super::{AgentError, CostChanges, DecisionReport, NONE_OBSERVED};
use crate::db::{Explained, OperatorKind, PlanTree};
use crate::domain::{AgentRole, SqlQuery};
use crate::kb::{Corpus, RetrieveOptions};
use crate::llm::AgentLlm;
use crate::membuf::{MemoryBuffer, SliceKind};
use crate::prompt::Prompts;

/// Entries pulled from the knowledge base on a rejection.
pub const DECISION_K: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Judgment {
    pub report: DecisionReport,
    /// Knowledge-base ids written into memory (empty on accept).
    pub retrieved: Vec<String>,
}

#[derive(Debug, Default)]
struct Shape {
    nodes: usize,
    joins: BTreeMap<String, usize>,
    subplans: usize,
    cte_scans: usize,
    seq_scans: usize,
    /// rows x width summed over operators that hold their input in memory.
    working_bytes: f64,
}

fn shape(plan: &PlanTree) -> Shape {
    let mut s = Shape::default();
    for n in plan.nodes() {
        s.nodes += 1;
        if n.kind == OperatorKind::Join {
            *s.joins.entry(n.node_type.clone()).or_default() += 1;
        }
        if n.subplan_name.is_some() {
            s.subplans += 1;
        }
        match n.kind {
            OperatorKind::CteScan => s.cte_scans += 1,
            OperatorKind::Sort | OperatorKind::Hash | OperatorKind::Materialize | OperatorKind::Aggregate => {
                s.working_bytes += n.plan_rows * n.plan_width as f64;
            }
            _ => {}
        }
        if n.node_type == "Seq Scan" {
            s.seq_scans += 1;
        }
    }
    s
}

fn joins_text(j: &BTreeMap<String, usize>) -> String {
    if j.is_empty() {
        return "no joins".into();
    }
    j.iter().map(|(k, v)| format!("{v} {k}")).collect::<Vec<_>>().join(", ")
}

/// Deterministic plan and resource dimensions of the report.
pub fn describe_plans(before: &PlanTree, after: &PlanTree) -> (String, String) {
    let (a, b) = (shape(before), shape(after));
    let plan = format!(
        "nodes {} -> {}; joins [{}] -> [{}]; subplans {} -> {}; CTE scans {} -> {}; seq scans {} -> {}",
        a.nodes,
        b.nodes,
        joins_text(&a.joins),
        joins_text(&b.joins),
        a.subplans,
        b.subplans,
        a.cte_scans,
        b.cte_scans,
        a.seq_scans,
        b.seq_scans
    );
    let res = format!(
        "estimated sort/hash/materialize/aggregate working set {:.0} -> {:.0} bytes",
        a.working_bytes, b.working_bytes
    );
    (plan, res)
}

fn parse_decision(answer: &str) -> (bool, String) {
    let mut other = String::new();
    let mut verdict = false;
    for line in answer.lines() {
        let t = line.trim().trim_start_matches(['*', '-', ' ']);
        let upper = t.to_ascii_uppercase();
        if upper.starts_with("OTHER:") {
            other = t[6..].trim().to_string();
        } else if let Some(rest) = upper.strip_prefix("DECISION:") {
            verdict = rest.trim_start().trim_start_matches('*').starts_with("ACCEPT");
        }
    }
    if other.is_empty() {
        other = NONE_OBSERVED.into();
    }
    (verdict, other)
}

/// Builds the four-dimension report and asks the model for the verdict. On
/// reject, knowledge matching the candidate and the report is written to
/// memory together with the report itself.
#[allow(clippy::too_many_arguments)]
pub fn decision_judge(
    original: &SqlQuery,
    candidate: &SqlQuery,
    before: &Explained,
    after: &Explained,
    buffer: &mut MemoryBuffer,
    iteration: usize,
    corpus: &Corpus,
    llm: &AgentLlm,
    prompts: &Prompts,
) -> Result<Judgment, AgentError> {
    let cost_changes = CostChanges {
        before: before.cost,
        after: after.cost,
        delta: before.cost.total_cost - after.cost.total_cost,
    };
    let (plan_characteristics, resource_utilization) = describe_plans(&before.plan, &after.plan);
    let cb = format!("{:.2}", before.cost.total_cost);
    let ca = format!("{:.2}", after.cost.total_cost);
    let cc = format!("{cb} -> {ca} (reduction {:.2})", cost_changes.delta);
    let memory = buffer.render(AgentRole::Decision);
    let vars = [
        ("cost_before", cb.as_str()),
        ("cost_after", ca.as_str()),
        ("original", original.text()),
        ("candidate", candidate.text()),
        ("cost_changes", cc.as_str()),
        ("plan_characteristics", plan_characteristics.as_str()),
        ("resource_utilization", resource_utilization.as_str()),
        ("memory", memory.as_str()),
    ];
    let reply = llm.ask(prompts.messages("decision", &vars))?;
    let (verdict, other_improvements) = parse_decision(&reply.answer);
    let report = DecisionReport { cost_changes, plan_characteristics, resource_utilization, other_improvements, verdict };
    if verdict {
        return Ok(Judgment { report, retrieved: Vec::new() });
    }

    let rendered = report.render();
    let hits = corpus.retrieve(
        &format!("{}\n{}", candidate.text(), rendered),
        &RetrieveOptions { k: DECISION_K, category: None, drop_zero: true },
    );
    let retrieved: Vec<String> = hits.iter().map(|h| h.entry.id.clone()).collect();
    let knowledge: String = hits.iter().map(|h| h.entry.render()).collect();
    buffer.put(
        SliceKind::QueryInfo,
        &format!("original:\n{}\nlast candidate:\n{}\n", original.text(), candidate.text()),
        iteration,
    );
    buffer.put(SliceKind::DecisionReport, &rendered, iteration);
    buffer.put(SliceKind::RetrievedKnowledge, &knowledge, iteration);
    buffer.put(SliceKind::PlanSummary, &after.plan.summary(), iteration);
    Ok(Judgment { report, retrieved })
}
