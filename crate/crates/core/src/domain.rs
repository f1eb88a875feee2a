//! Shared domain types and the decision-process vocabulary of a rewrite run.
//!
//! A rewrite is modelled as a sequence of query states `S0, S1, ...`. Each
//! refinement action moves the run to a new state, and the terminal action
//! emits the current SQL as the final query. The reward of a step is the drop
//! in optimizer cost between the two states it links.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::DecisionReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    #[default]
    Postgres,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("SQL text is empty")]
pub struct EmptySql;

/// A SQL statement in a known dialect. The text is never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SqlQuery {
    text: String,
    #[serde(default)]
    dialect: Dialect,
}

impl SqlQuery {
    pub fn new(text: impl Into<String>) -> Result<Self, EmptySql> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(EmptySql);
        }
        Ok(Self {
            text,
            dialect: Dialect::Postgres,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn dialect(&self) -> Dialect {
        self.dialect
    }

    /// Whitespace-collapsed text without a trailing semicolon. Two queries
    /// with the same normalized text are treated as the same candidate.
    pub fn normalized(&self) -> String {
        crate::sqltext::normalize_ws(&self.text)
    }

    pub fn same_text_as(&self, other: &SqlQuery) -> bool {
        self.normalized() == other.normalized()
    }
}

impl fmt::Display for SqlQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "label")]
pub enum RefinementKind {
    JoinReorder,
    PredicatePushdown,
    CteConversion,
    SubqueryFlatten,
    ConstantFold,
    PredicateSimplify,
    RedundantElim,
    Other(String),
}

impl RefinementKind {
    /// Best-effort mapping from a free-text proposal description.
    pub fn infer(description: &str, sql: &str) -> Self {
        let d = description.to_ascii_lowercase();
        let s = sql.to_ascii_lowercase();
        let has = |w: &str| d.contains(w);
        if has("cte") || has("common table") || (s.trim_start().starts_with("with") && has("with")) {
            RefinementKind::CteConversion
        } else if has("reorder") || has("join order") {
            RefinementKind::JoinReorder
        } else if has("push") {
            RefinementKind::PredicatePushdown
        } else if has("flatten") || has("unnest") || has("decorrelat") || has("subquer") {
            RefinementKind::SubqueryFlatten
        } else if has("constant") || has("fold") {
            RefinementKind::ConstantFold
        } else if has("simplif") || has("predicate") {
            RefinementKind::PredicateSimplify
        } else if has("redundant") || has("eliminat") || has("remove") {
            RefinementKind::RedundantElim
        } else if s.trim_start().starts_with("with") {
            RefinementKind::CteConversion
        } else {
            RefinementKind::Other("unclassified refinement".into())
        }
    }
}

/// One refinement step `R_t` together with the SQL it produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementAction {
    pub kind: RefinementKind,
    pub description: String,
    pub resulting_sql: SqlQuery,
}

/// One state `S_t` of the rewrite process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryState {
    pub sql: SqlQuery,
    pub step_index: usize,
    pub applied_refinements: Vec<RefinementAction>,
}

impl QueryState {
    pub fn initial(sql: SqlQuery) -> Self {
        Self {
            sql,
            step_index: 0,
            applied_refinements: Vec::new(),
        }
    }
}

/// Either a refinement or the terminal action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Refine(RefinementAction),
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transitioned {
    State(QueryState),
    Final(SqlQuery),
}

/// Deterministic transition: a refinement appends itself and moves to its
/// resulting SQL, the terminal action emits the current SQL unchanged.
pub fn transition(state: &QueryState, action: Action) -> Transitioned {
    match action {
        Action::Refine(r) => {
            let mut applied = state.applied_refinements.clone();
            let sql = r.resulting_sql.clone();
            applied.push(r);
            Transitioned::State(QueryState {
                sql,
                step_index: state.step_index + 1,
                applied_refinements: applied,
            })
        }
        Action::Terminal => Transitioned::Final(state.sql.clone()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSource {
    Explain,
    LlmJudgment,
    Blended,
}

/// Optimizer cost of a query, in the planner's cost units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub total_cost: f64,
    pub startup_cost: f64,
    pub source: CostSource,
}

impl CostEstimate {
    pub fn explain(startup_cost: f64, total_cost: f64) -> Self {
        Self {
            total_cost,
            startup_cost,
            source: CostSource::Explain,
        }
    }

    /// Prefers an EXPLAIN-backed estimate; an LLM judgment never overrides one.
    pub fn prefer(self, other: CostEstimate) -> CostEstimate {
        match (self.source, other.source) {
            (CostSource::Explain, _) => self,
            (_, CostSource::Explain) => other,
            _ => self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub value: f64,
}

/// `Cost(S_t) - Cost(S_t+1)`; positive iff the estimated cost dropped.
pub fn reward(before: &CostEstimate, after: &CostEstimate) -> Reward {
    Reward {
        value: before.total_cost - after.total_cost,
    }
}

/// Discounted return of a reward sequence. With the default `gamma = 1.0`
/// this is the plain sum, which telescopes to `Cost(S_0) - Cost(S_n)`.
pub fn discounted_return(rewards: &[Reward], gamma: f64) -> f64 {
    rewards
        .iter()
        .rev()
        .fold(0.0, |acc, r| r.value + gamma * acc)
}

/// The specialised agents plus the offline roles that also talk to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Reasoning,
    Rewrite,
    Assistant,
    Decision,
    Hints,
    Knowledge,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Reasoning => "reasoning",
            AgentRole::Rewrite => "rewrite",
            AgentRole::Assistant => "assistant",
            AgentRole::Decision => "decision",
            AgentRole::Hints => "hints",
            AgentRole::Knowledge => "knowledge",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeVerdict {
    VerifiedTool,
    VerifiedLlm,
    FallbackOriginal,
}

/// Result of one complete rewrite run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewriteOutcome {
    pub final_sql: SqlQuery,
    pub cost: CostEstimate,
    pub report: DecisionReport,
    pub proposals: Vec<RefinementAction>,
    pub equivalence_verdict: OutcomeVerdict,
    /// Ids of knowledge-base entries pulled in by the Decision agent.
    pub advanced_knowledge: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> SqlQuery {
        SqlQuery::new(s).unwrap()
    }

    fn est(c: f64) -> CostEstimate {
        CostEstimate::explain(0.0, c)
    }

    fn refine(sql: &str) -> RefinementAction {
        RefinementAction {
            kind: RefinementKind::PredicatePushdown,
            description: "push filter".into(),
            resulting_sql: q(sql),
        }
    }

    #[test]
    fn empty_sql_rejected() {
        assert_eq!(SqlQuery::new("  \n"), Err(EmptySql));
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(&est(100.0), &est(60.0)).value, 40.0);
        assert_eq!(reward(&est(50.0), &est(50.0)).value, 0.0);
        assert_eq!(reward(&est(60.0), &est(75.0)).value, -15.0);
    }

    #[test]
    fn transition_refine_then_terminal() {
        let s0 = QueryState::initial(q("SELECT 1"));
        let r0 = refine("SELECT 2");
        let r1 = refine("SELECT 3");
        let Transitioned::State(s1) = transition(&s0, Action::Refine(r0.clone())) else {
            panic!("expected state");
        };
        assert_eq!(s1.step_index, 1);
        assert_eq!(s1.applied_refinements, vec![r0.clone()]);
        let Transitioned::State(s2) = transition(&s1, Action::Refine(r1.clone())) else {
            panic!("expected state");
        };
        assert_eq!(s2.applied_refinements, vec![r0, r1]);
        assert_eq!(s2.step_index, s2.applied_refinements.len());
        assert_eq!(
            transition(&s2, Action::Terminal),
            Transitioned::Final(q("SELECT 3"))
        );
    }

    #[test]
    fn terminal_emits_current_form() {
        let s = QueryState {
            sql: q("SELECT 42"),
            step_index: 3,
            applied_refinements: vec![refine("a"), refine("b"), refine("SELECT 42")],
        };
        assert_eq!(
            transition(&s, Action::Terminal),
            Transitioned::Final(q("SELECT 42"))
        );
    }

    #[test]
    fn explain_cost_wins_over_llm_judgment() {
        let llm = CostEstimate {
            total_cost: 1.0,
            startup_cost: 0.0,
            source: CostSource::LlmJudgment,
        };
        assert_eq!(llm.prefer(est(500.0)).total_cost, 500.0);
        assert_eq!(est(500.0).prefer(llm).total_cost, 500.0);
    }

    #[test]
    fn unit_discount_is_plain_sum() {
        let rs = [Reward { value: 3.0 }, Reward { value: -1.0 }];
        assert_eq!(discounted_return(&rs, 1.0), 2.0);
        assert_eq!(discounted_return(&rs, 0.5), 2.5);
    }

    #[test]
    fn infer_kind() {
        assert_eq!(
            RefinementKind::infer("Convert nested subqueries to a CTE", "WITH x AS (SELECT 1) SELECT * FROM x"),
            RefinementKind::CteConversion
        );
        assert_eq!(
            RefinementKind::infer("reorder joins by selectivity", "SELECT 1"),
            RefinementKind::JoinReorder
        );
    }
}
