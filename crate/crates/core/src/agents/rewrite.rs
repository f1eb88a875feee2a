use super::{AgentError, ReasoningChain, RewriteProposal};
use crate::db::{Database, DbError};
use crate::domain::{discounted_return, reward, AgentRole, CostEstimate, SqlQuery};
use crate::kb::categorize_text;
use crate::llm::{extract_sql, AgentLlm};
use crate::membuf::MemoryBuffer;
use crate::prompt::Prompts;

/// What the Rewrite agent hands to the Assistant.
#[derive(Debug, Clone, PartialEq)]
pub struct RewriteStep {
    /// Every candidate that could be planned, in chain order.
    pub proposals: Vec<RewriteProposal>,
    /// Index into `proposals` of the cheapest one.
    pub selected: Option<usize>,
    /// The query after the enhancement prompt.
    pub enhanced: SqlQuery,
    /// The enhancement left the candidate alone, so there is nothing more to
    /// try in this iteration.
    pub early_stop: bool,
}

impl RewriteStep {
    pub fn selected_proposal(&self) -> Option<&RewriteProposal> {
        self.selected.map(|i| &self.proposals[i])
    }

    pub fn render_proposals(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.proposals.iter().enumerate() {
            let mark = if Some(i) == self.selected { " (selected)" } else { "" };
            out.push_str(&format!(
                "{}. [{}] {} cost={}{}\n",
                i + 1,
                p.category.as_str(),
                p.description,
                p.cost.map(|c| format!("{c:.2}")).unwrap_or_else(|| "?".into()),
                mark
            ));
        }
        out
    }
}

/// Cheapest proposal; ties go to the higher self score, then to the earlier
/// node.
pub fn select_candidate(costs: &[(f64, Option<f64>)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(cost, score)) in costs.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let (bc, bs) = costs[b];
                cost < bc || (cost == bc && score.unwrap_or(f64::NEG_INFINITY) > bs.unwrap_or(f64::NEG_INFINITY))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Plans every candidate of the chain, keeps the cheapest and asks the model
/// to push it further.
#[allow(clippy::too_many_arguments)]
pub fn rewrite_select_and_enhance(
    q0: &SqlQuery,
    q0_cost: CostEstimate,
    chain: &ReasoningChain,
    db: &mut dyn Database,
    buffer: &MemoryBuffer,
    gamma: f64,
    llm: &AgentLlm,
    prompts: &Prompts,
) -> Result<RewriteStep, AgentError> {
    let mut proposals = Vec::new();
    let mut scores = Vec::new();
    let mut prev = q0_cost;
    let mut rewards = Vec::new();
    for (idx, node) in chain.candidates() {
        let sql = node.sql_candidate.clone().expect("candidates carry SQL");
        match db.explain(&sql) {
            Ok(ex) => {
                rewards.push(reward(&prev, &ex.cost));
                prev = ex.cost;
                proposals.push(RewriteProposal {
                    category: categorize_text(&format!("{} {}", node.proposal_text, sql.text())),
                    description: node.proposal_text.clone(),
                    sql,
                    expected_reward: discounted_return(&rewards, gamma),
                    cost: Some(ex.cost.total_cost),
                });
                scores.push((ex.cost.total_cost, node.self_score));
            }
            Err(e @ DbError::Connection(_)) => return Err(e.into()),
            Err(e) => tracing::debug!(node = idx, error = %e, "candidate cannot be planned"),
        }
    }
    let Some(selected) = select_candidate(&scores) else {
        return Ok(RewriteStep { proposals, selected: None, enhanced: q0.clone(), early_stop: true });
    };
    let chosen = proposals[selected].sql.clone();
    let mut step = RewriteStep { proposals, selected: Some(selected), enhanced: chosen.clone(), early_stop: false };

    let memory = buffer.render(AgentRole::Rewrite);
    let listing = step.render_proposals();
    let vars = [
        ("original", q0.text()),
        ("candidate", chosen.text()),
        ("proposals", listing.as_str()),
        ("memory", memory.as_str()),
    ];
    let reply = llm.ask(prompts.messages("enhance", &vars))?;
    match extract_sql(&reply.answer).into_iter().next() {
        Some(sql) if !sql.same_text_as(&chosen) => step.enhanced = sql,
        _ => step.early_stop = true,
    }
    Ok(step)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::agents::parse_chain;
    use crate::db::StubDatabase;
    use crate::llm::{Matcher, ProviderConfig, ScriptRule, ScriptedMock, Transcript};

    fn llm(reply: &str) -> AgentLlm {
        let rules = vec![ScriptRule::new(Matcher::contains("ROLE: enhance"), [reply.to_string()]).repeating()];
        AgentLlm::new(Arc::new(ScriptedMock::new(rules)), ProviderConfig::default(), AgentRole::Rewrite, Transcript::new())
    }

    fn chain(text: &str) -> ReasoningChain {
        ReasoningChain { nodes: parse_chain(text), raw_trace: text.into() }
    }

    const CHAIN: &str = "Step: a\n```sql\nSELECT 2\n```\nStep: b\nScore: 9\n```sql\nSELECT 3\n```\nStep: c\n```sql\nSELEC broken\n```\n";

    #[test]
    fn select_ties() {
        assert_eq!(select_candidate(&[]), None);
        assert_eq!(select_candidate(&[(5.0, None), (3.0, None), (3.0, Some(1.0))]), Some(2));
        assert_eq!(select_candidate(&[(3.0, Some(1.0)), (3.0, Some(1.0))]), Some(0));
    }

    #[test]
    fn picks_cheapest_and_enhances() {
        let mut db = StubDatabase::new().with_cost("SELECT 1", 100.0).with_cost("SELECT 2", 60.0).with_cost("SELECT 3", 80.0);
        let q0 = SqlQuery::new("SELECT 1").unwrap();
        let model = llm("```sql\nSELECT 4\n```");
        let step = rewrite_select_and_enhance(
            &q0,
            CostEstimate::explain(0.0, 100.0),
            &chain(CHAIN),
            &mut db,
            &MemoryBuffer::default(),
            1.0,
            &model,
            &Prompts::builtin(),
        )
        .unwrap();
        assert_eq!(step.proposals.len(), 2, "the broken candidate is dropped");
        assert_eq!(step.selected, Some(0));
        assert_eq!(step.proposals[0].expected_reward, 40.0);
        // 100 -> 60 -> 80 telescopes to 20
        assert_eq!(step.proposals[1].expected_reward, 20.0);
        assert_eq!(step.enhanced.text(), "SELECT 4");
        assert!(!step.early_stop);
    }

    #[test]
    fn unchanged_enhancement_stops_early() {
        let mut db = StubDatabase::new();
        let q0 = SqlQuery::new("SELECT 1").unwrap();
        let model = llm("It is already optimal.\n```sql\nSELECT   3;\n```");
        let step = rewrite_select_and_enhance(
            &q0,
            CostEstimate::explain(0.0, 100.0),
            &chain(CHAIN),
            &mut db,
            &MemoryBuffer::default(),
            1.0,
            &model,
            &Prompts::builtin(),
        )
        .unwrap();
        assert!(step.early_stop);
        assert_eq!(step.enhanced.text(), "SELECT 3", "equal costs, higher self score wins");
    }

    #[test]
    fn nothing_plannable_returns_original() {
        let mut db = StubDatabase::new();
        let q0 = SqlQuery::new("SELECT 1").unwrap();
        let model = llm("unused");
        let only_broken = chain("```sql\nSELEC x\n```");
        let step = rewrite_select_and_enhance(
            &q0,
            CostEstimate::explain(0.0, 1.0),
            &only_broken,
            &mut db,
            &MemoryBuffer::default(),
            1.0,
            &model,
            &Prompts::builtin(),
        )
        .unwrap();
        assert!(step.early_stop && step.selected.is_none());
        assert_eq!(step.enhanced, q0);
        assert_eq!(model.transcript().len(), 0);
    }
}
