use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Hint, HintKind, MaterializeMode};
use crate::db::{JoinMethod, OperatorKind, PlanNode, PlanTree, StatsSnapshot};
use crate::llm::AgentLlm;
use crate::prompt::Prompts;
use crate::sqltext;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HintConfig {
    /// A CTE with at most this many estimated rows and no aggregate counts
    /// as small enough to inline.
    pub small_cte_rows: f64,
    /// Below this ratio of estimate to the smaller input, a join's row
    /// estimate is treated as an underestimate by the offline heuristic.
    pub underestimate_ratio: f64,
    /// Both join inputs above this many rows make a nested loop suspect.
    pub nest_loop_rows: f64,
    pub materialize_mode: MaterializeMode,
}

impl Default for HintConfig {
    fn default() -> Self {
        Self {
            small_cte_rows: 1000.0,
            underestimate_ratio: 0.01,
            nest_loop_rows: 1000.0,
            materialize_mode: MaterializeMode::Compat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub issue: String,
    pub hint: Hint,
}

fn veto_for(m: JoinMethod) -> HintKind {
    match m {
        JoinMethod::Hash => HintKind::NoHashJoin,
        JoinMethod::Merge => HintKind::NoMergeJoin,
        JoinMethod::NestLoop => HintKind::NoNestLoop,
    }
}

/// alias -> relation for every base scan in the plan.
fn relations(plan: &PlanTree) -> HashMap<String, String> {
    plan.nodes()
        .into_iter()
        .filter(|n| n.kind == OperatorKind::Scan)
        .filter_map(|n| {
            let rel = n.relation.clone()?;
            Some((n.alias.clone().unwrap_or_else(|| rel.clone()), rel))
        })
        .collect()
}

fn smallest_input(join: &PlanNode, rels: &HashMap<String, String>, stats: &StatsSnapshot) -> Option<f64> {
    join.scanned_aliases()
        .iter()
        .filter_map(|a| rels.get(a).and_then(|r| stats.rows(r)))
        .min_by(f64::total_cmp)
}

fn cte_suggestions(plan: &PlanTree, query: &str, cfg: &HintConfig) -> Vec<Suggestion> {
    let body = sqltext::split_hint_block(query).1;
    sqltext::ctes(body)
        .into_iter()
        .filter_map(|c| {
            let rows = plan.cte_rows(&c.name);
            let reason = if c.references == 1 {
                format!("CTE {} is referenced once", c.name)
            } else if !c.has_aggregate && rows.is_some_and(|r| r <= cfg.small_cte_rows) {
                format!("CTE {} is small ({} estimated rows) and has no aggregate", c.name, rows.unwrap_or(0.0))
            } else {
                return None;
            };
            Some(Suggestion { hint: Hint::no_materialize(&c.name, &reason), issue: reason })
        })
        .collect()
}

/// Offline judgement of join estimates and operators from statistics alone.
pub fn heuristic_suggestions(plan: &PlanTree, stats: &StatsSnapshot, query: &str, cfg: &HintConfig) -> Vec<Suggestion> {
    let rels = relations(plan);
    let mut out = Vec::new();
    for j in plan.joins() {
        let aliases = j.scanned_aliases();
        if aliases.len() < 2 {
            continue;
        }
        let names: Vec<&str> = aliases.iter().map(String::as_str).collect();
        if let Some(min_rows) = smallest_input(j, &rels, stats) {
            if min_rows >= 1.0 && j.plan_rows < min_rows * cfg.underestimate_ratio {
                let target = min_rows.round() as u64;
                let why = format!(
                    "estimate {} rows is far below the {} rows of the smaller input",
                    j.plan_rows, target
                );
                out.push(Suggestion {
                    issue: format!("{} over ({}): {}", j.node_type, aliases.join(" "), why),
                    hint: Hint::rows(&names, target, &why),
                });
            }
        }
        if j.join_method() == Some(JoinMethod::NestLoop)
            && j.children.len() == 2
            && j.children.iter().all(|c| c.plan_rows > cfg.nest_loop_rows)
        {
            let why = "nested loop over two large inputs".to_string();
            out.push(Suggestion {
                issue: format!("Nested Loop over ({}): {}", aliases.join(" "), why),
                hint: Hint::join_veto(HintKind::NoNestLoop, &names, &why),
            });
        }
    }
    out.extend(cte_suggestions(plan, query, cfg));
    out
}

fn verdict_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^\W*(\d+)\s*[:.)]\s*(OK|BAD)\b(.*)$").unwrap())
}

fn rows_value() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)rows\s*=\s*([0-9][0-9_,]*)").unwrap())
}

enum Item<'a> {
    Estimate(&'a PlanNode),
    Operator(&'a PlanNode, JoinMethod),
}

/// Judges every join's row estimate and operator. With a model, each item
/// goes into one prompt; without one the statistics heuristic decides. CTE
/// inlining follows a fixed rule either way.
pub fn analyze_plan(
    plan: &PlanTree,
    stats: &StatsSnapshot,
    query: &str,
    llm: Option<(&AgentLlm, &Prompts)>,
    cfg: &HintConfig,
) -> Vec<Suggestion> {
    let Some((llm, prompts)) = llm else {
        return heuristic_suggestions(plan, stats, query, cfg);
    };
    let mut items = Vec::new();
    let mut listing = String::new();
    for j in plan.joins() {
        if j.scanned_aliases().len() < 2 {
            continue;
        }
        let aliases = j.scanned_aliases().join(" ");
        items.push(Item::Estimate(j));
        listing.push_str(&format!("{}. row estimate of {} over ({}): {} rows\n", items.len(), j.node_type, aliases, j.plan_rows));
        if let Some(m) = j.join_method() {
            items.push(Item::Operator(j, m));
            listing.push_str(&format!("{}. join operator {} over ({})\n", items.len(), j.node_type, aliases));
        }
    }
    let mut out = Vec::new();
    if !items.is_empty() {
        let plan_s = plan.summary();
        let stats_s = stats.summary();
        let vars = [("plan", plan_s.as_str()), ("stats", stats_s.as_str()), ("items", listing.as_str())];
        match llm.ask(prompts.messages("hints", &vars)) {
            Ok(reply) => {
                for cap in verdict_line().captures_iter(&reply.answer) {
                    if !cap[2].eq_ignore_ascii_case("BAD") {
                        continue;
                    }
                    let Some(item) = cap[1].parse::<usize>().ok().and_then(|n| n.checked_sub(1)).and_then(|i| items.get(i)) else {
                        continue;
                    };
                    let rest = cap[3].trim().to_string();
                    match item {
                        Item::Estimate(j) => {
                            let Some(n) = rows_value()
                                .captures(&rest)
                                .and_then(|c| c[1].replace(['_', ','], "").parse::<u64>().ok())
                                .filter(|&n| n > 0)
                            else {
                                continue;
                            };
                            let aliases = j.scanned_aliases();
                            let names: Vec<&str> = aliases.iter().map(String::as_str).collect();
                            let why = rows_value().replace(&rest, "").trim().to_string();
                            out.push(Suggestion {
                                issue: format!("row estimate {} of {} over ({})", j.plan_rows, j.node_type, aliases.join(" ")),
                                hint: Hint::rows(&names, n, &why),
                            });
                        }
                        Item::Operator(j, m) => {
                            let aliases = j.scanned_aliases();
                            let names: Vec<&str> = aliases.iter().map(String::as_str).collect();
                            out.push(Suggestion {
                                issue: format!("{} over ({})", j.node_type, aliases.join(" ")),
                                hint: Hint::join_veto(veto_for(*m), &names, &rest),
                            });
                        }
                    }
                }
            }
            Err(e) => {
                tracing::warn!(error = %e, "hint analysis model unavailable, using statistics heuristic");
                return heuristic_suggestions(plan, stats, query, cfg);
            }
        }
    }
    out.extend(cte_suggestions(plan, query, cfg));
    out
}
