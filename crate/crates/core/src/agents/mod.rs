//! The four agents of the rewrite loop: Reasoning proposes, Rewrite selects
//! and enhances, Assistant verifies, Decision judges.

mod assistant;
mod decision;
mod reasoning;
mod rewrite;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::assistant::{assistant_verify, Assisted};
pub use self::decision::{decision_judge, describe_plans, Judgment, DECISION_K};
pub use self::reasoning::{parse_chain, reasoning_generate};
pub use self::rewrite::{rewrite_select_and_enhance, select_candidate, RewriteStep};

use crate::db::DbError;
use crate::domain::{CostEstimate, RefinementAction, RefinementKind, SqlQuery};
use crate::kb::Category;
use crate::llm::LlmError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("reasoning produced no SQL candidate")]
    EmptyChain,
    #[error("syntax repair failed after {attempts} attempts: {message}")]
    RepairAbort { attempts: usize, message: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Db(#[from] DbError),
}

/// One node of a reasoning chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainNode {
    pub proposal_text: String,
    pub sql_candidate: Option<SqlQuery>,
    /// The model's own estimate of the cost reduction.
    pub self_score: Option<f64>,
}

impl ChainNode {
    pub fn refinement(&self) -> Option<RefinementAction> {
        let sql = self.sql_candidate.clone()?;
        Some(RefinementAction {
            kind: RefinementKind::infer(&self.proposal_text, sql.text()),
            description: self.proposal_text.clone(),
            resulting_sql: sql,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub nodes: Vec<ChainNode>,
    pub raw_trace: String,
}

impl ReasoningChain {
    pub fn candidates(&self) -> impl Iterator<Item = (usize, &ChainNode)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.sql_candidate.is_some())
    }

    pub fn has_candidate(&self) -> bool {
        self.candidates().next().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteProposal {
    pub category: Category,
    pub description: String,
    pub sql: SqlQuery,
    /// Advisory: discounted cost reduction along the chain up to this node.
    pub expected_reward: f64,
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostChanges {
    pub before: CostEstimate,
    pub after: CostEstimate,
    pub delta: f64,
}

/// Four-dimension assessment of a rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub cost_changes: CostChanges,
    pub plan_characteristics: String,
    pub resource_utilization: String,
    pub other_improvements: String,
    pub verdict: bool,
}

pub const NONE_OBSERVED: &str = "none observed";

impl DecisionReport {
    pub fn render(&self) -> String {
        format!(
            "cost changes: {:.2} -> {:.2} (reduction {:.2})\nplan characteristics: {}\nresource utilization: {}\nother improvements: {}\nverdict: {}\n",
            self.cost_changes.before.total_cost,
            self.cost_changes.after.total_cost,
            self.cost_changes.delta,
            self.plan_characteristics,
            self.resource_utilization,
            self.other_improvements,
            if self.verdict { "accept" } else { "reject" }
        )
    }

    pub fn is_complete(&self) -> bool {
        [&self.plan_characteristics, &self.resource_utilization, &self.other_improvements]
            .iter()
            .all(|s| !s.trim().is_empty())
    }
}
