//! Agent memory buffer: one bounded slice per kind of context.
//!
//! Writing a slice replaces the previous content of that kind, so prompts
//! never accumulate history. A slice's cap covers its rendered form (label
//! line plus content), so a rendering never exceeds the sum of the caps of
//! the slices it includes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::AgentRole;

pub const DEFAULT_SLICE_CAP: usize = 4000;
pub const TRUNCATION_MARKER: &str = "[...truncated...]\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKind {
    // Declaration order is the rendering order.
    QueryInfo,
    PlanSummary,
    RewriteProposals,
    RetrievedKnowledge,
    DecisionReport,
}

impl SliceKind {
    pub const ALL: [SliceKind; 5] = [
        SliceKind::QueryInfo,
        SliceKind::PlanSummary,
        SliceKind::RewriteProposals,
        SliceKind::RetrievedKnowledge,
        SliceKind::DecisionReport,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SliceKind::QueryInfo => "query information",
            SliceKind::PlanSummary => "plan summary",
            SliceKind::RewriteProposals => "rewrite proposals",
            SliceKind::RetrievedKnowledge => "retrieved knowledge",
            SliceKind::DecisionReport => "decision report",
        }
    }

    fn header(self) -> String {
        format!("[{}]\n", self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySlice {
    pub kind: SliceKind,
    pub content: String,
    pub updated_at_iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    slices: BTreeMap<SliceKind, MemorySlice>,
    slice_cap: usize,
}

impl Default for MemoryBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_SLICE_CAP)
    }
}

/// Keeps the last `budget` characters, prefixed by the marker when cut.
fn keep_tail(content: &str, budget: usize) -> String {
    let n = content.chars().count();
    if n <= budget {
        return content.to_string();
    }
    let marker_len = TRUNCATION_MARKER.chars().count();
    let keep = budget.saturating_sub(marker_len);
    let tail: String = content.chars().skip(n - keep).collect();
    let mut out = String::with_capacity(budget);
    out.push_str(&TRUNCATION_MARKER[..TRUNCATION_MARKER.len().min(budget)]);
    out.push_str(&tail);
    out
}

impl MemoryBuffer {
    pub fn new(slice_cap: usize) -> Self {
        Self {
            slices: BTreeMap::new(),
            slice_cap,
        }
    }

    pub fn slice_cap(&self) -> usize {
        self.slice_cap
    }

    /// Upper bound on any rendering of this buffer.
    pub fn total_cap(&self) -> usize {
        self.slice_cap * SliceKind::ALL.len()
    }

    /// Replaces the slice of `kind`, truncating its head if it is over cap.
    pub fn put(&mut self, kind: SliceKind, content: &str, iteration: usize) {
        let budget = self.slice_cap.saturating_sub(kind.header().chars().count() + 1);
        self.slices.insert(
            kind,
            MemorySlice {
                kind,
                content: keep_tail(content, budget),
                updated_at_iteration: iteration,
            },
        );
    }

    pub fn get(&self, kind: SliceKind) -> Option<&MemorySlice> {
        self.slices.get(&kind)
    }

    pub fn contains(&self, kind: SliceKind) -> bool {
        self.slices.contains_key(&kind)
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slices(&self) -> impl Iterator<Item = &MemorySlice> {
        self.slices.values()
    }

    /// Slice kinds each agent gets to see.
    pub fn relevant_kinds(role: AgentRole) -> &'static [SliceKind] {
        use SliceKind::*;
        match role {
            AgentRole::Reasoning | AgentRole::Decision => &SliceKind::ALL,
            AgentRole::Rewrite => &[QueryInfo, PlanSummary, RewriteProposals, RetrievedKnowledge],
            AgentRole::Assistant => &[QueryInfo],
            AgentRole::Hints => &[QueryInfo, PlanSummary],
            AgentRole::Knowledge => &[],
        }
    }

    /// Deterministic rendering of the slices relevant to `role`. Absent
    /// slices produce nothing.
    pub fn render(&self, role: AgentRole) -> String {
        let wanted = Self::relevant_kinds(role);
        let mut out = String::new();
        for slice in self.slices.values().filter(|s| wanted.contains(&s.kind)) {
            out.push_str(&slice.kind.header());
            out.push_str(&slice.content);
            out.push('\n');
        }
        out
    }
}
