//! Parsed `EXPLAIN (FORMAT JSON)` plans.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::CostEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Scan,
    Join,
    Aggregate,
    Sort,
    Hash,
    Materialize,
    CteScan,
    Result,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinMethod {
    Hash,
    Merge,
    NestLoop,
}

impl OperatorKind {
    pub fn classify(node_type: &str) -> Self {
        match node_type {
            "CTE Scan" => OperatorKind::CteScan,
            "Hash Join" | "Merge Join" | "Nested Loop" => OperatorKind::Join,
            "Aggregate" | "GroupAggregate" | "HashAggregate" | "WindowAgg" => OperatorKind::Aggregate,
            "Sort" | "Incremental Sort" => OperatorKind::Sort,
            "Hash" => OperatorKind::Hash,
            "Materialize" | "Memoize" => OperatorKind::Materialize,
            "Result" => OperatorKind::Result,
            t if t.ends_with("Scan") => OperatorKind::Scan,
            _ => OperatorKind::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub node_type: String,
    pub kind: OperatorKind,
    pub relation: Option<String>,
    pub alias: Option<String>,
    pub cte_name: Option<String>,
    pub subplan_name: Option<String>,
    pub join_type: Option<String>,
    pub startup_cost: f64,
    pub total_cost: f64,
    pub plan_rows: f64,
    pub plan_width: u64,
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    pub fn join_method(&self) -> Option<JoinMethod> {
        match self.node_type.as_str() {
            "Hash Join" => Some(JoinMethod::Hash),
            "Merge Join" => Some(JoinMethod::Merge),
            "Nested Loop" => Some(JoinMethod::NestLoop),
            _ => None,
        }
    }

    /// Preorder walk of this node and its descendants.
    pub fn walk(&self) -> Vec<&PlanNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.walk());
        }
        out
    }

    /// Aliases (or relation names) of the base scans under this node,
    /// not descending into CTE definitions or subplans.
    pub fn scanned_aliases(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_aliases(&mut out);
        out
    }

    fn collect_aliases(&self, out: &mut Vec<String>) {
        if self.kind == OperatorKind::Scan || self.kind == OperatorKind::CteScan {
            if let Some(a) = self.alias.clone().or_else(|| self.relation.clone()).or_else(|| self.cte_name.clone()) {
                if !out.contains(&a) {
                    out.push(a);
                }
            }
        }
        for c in &self.children {
            if c.subplan_name.is_none() {
                c.collect_aliases(out);
            }
        }
    }

    fn from_json(v: &Value) -> Result<Self, String> {
        let obj = v.as_object().ok_or("plan node is not an object")?;
        let s = |k: &str| obj.get(k).and_then(Value::as_str).map(str::to_string);
        let f = |k: &str| obj.get(k).and_then(Value::as_f64);
        let node_type = s("Node Type").ok_or("plan node lacks \"Node Type\"")?;
        let children = match obj.get("Plans") {
            Some(Value::Array(items)) => items
                .iter()
                .map(PlanNode::from_json)
                .collect::<Result<Vec<_>, _>>()?,
            _ => Vec::new(),
        };
        Ok(PlanNode {
            kind: OperatorKind::classify(&node_type),
            relation: s("Relation Name"),
            alias: s("Alias"),
            cte_name: s("CTE Name"),
            subplan_name: s("Subplan Name"),
            join_type: s("Join Type"),
            startup_cost: f("Startup Cost").unwrap_or(0.0),
            total_cost: f("Total Cost").ok_or("plan node lacks \"Total Cost\"")?,
            plan_rows: f("Plan Rows").unwrap_or(0.0),
            plan_width: obj.get("Plan Width").and_then(Value::as_u64).unwrap_or(0),
            node_type,
            children,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTree {
    pub root: PlanNode,
}

impl PlanTree {
    /// Placeholder for a query that could not be planned.
    pub fn empty() -> Self {
        PlanTree {
            root: PlanNode {
                node_type: "Result".into(),
                kind: OperatorKind::Result,
                relation: None,
                alias: None,
                cte_name: None,
                subplan_name: None,
                join_type: None,
                startup_cost: 0.0,
                total_cost: 0.0,
                plan_rows: 0.0,
                plan_width: 0,
                children: vec![],
            },
        }
    }

    /// Parses the document returned by `EXPLAIN (FORMAT JSON)`, which is an
    /// array holding one object with a `"Plan"` key.
    pub fn from_explain_json(doc: &Value) -> Result<Self, String> {
        let top = match doc {
            Value::Array(items) => items.first().ok_or("empty EXPLAIN document")?,
            other => other,
        };
        let plan = top.get("Plan").ok_or("EXPLAIN document lacks \"Plan\"")?;
        Ok(PlanTree {
            root: PlanNode::from_json(plan)?,
        })
    }

    pub fn from_explain_str(text: &str) -> Result<Self, String> {
        let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Self::from_explain_json(&v)
    }

    pub fn cost(&self) -> CostEstimate {
        CostEstimate::explain(self.root.startup_cost, self.root.total_cost)
    }

    pub fn nodes(&self) -> Vec<&PlanNode> {
        self.root.walk()
    }

    pub fn joins(&self) -> Vec<&PlanNode> {
        self.nodes()
            .into_iter()
            .filter(|n| n.kind == OperatorKind::Join)
            .collect()
    }

    /// Number of CTE Scan nodes per CTE name.
    pub fn cte_scan_counts(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for n in self.nodes() {
            if let (OperatorKind::CteScan, Some(name)) = (n.kind, &n.cte_name) {
                match out.iter_mut().find(|(c, _)| c == name) {
                    Some((_, k)) => *k += 1,
                    None => out.push((name.clone(), 1)),
                }
            }
        }
        out
    }

    /// Estimated rows of a materialized CTE's defining subplan.
    pub fn cte_rows(&self, cte: &str) -> Option<f64> {
        let tag = format!("CTE {cte}");
        self.nodes()
            .into_iter()
            .find(|n| n.subplan_name.as_deref() == Some(tag.as_str()))
            .map(|n| n.plan_rows)
    }

    /// Compact one-line-per-node rendering used in prompts and reports.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        fn go(n: &PlanNode, depth: usize, out: &mut String) {
            let target = n
                .relation
                .as_deref()
                .map(|r| match n.alias.as_deref() {
                    Some(a) if a != r => format!(" on {r} {a}"),
                    _ => format!(" on {r}"),
                })
                .or_else(|| n.cte_name.as_deref().map(|c| format!(" on {c}")))
                .unwrap_or_default();
            out.push_str(&format!(
                "{}{}{} (cost={:.2}..{:.2} rows={} width={})\n",
                "  ".repeat(depth),
                n.node_type,
                target,
                n.startup_cost,
                n.total_cost,
                n.plan_rows,
                n.plan_width
            ));
            for c in &n.children {
                go(c, depth + 1, out);
            }
        }
        go(&self.root, 0, &mut out);
        out
    }
}
