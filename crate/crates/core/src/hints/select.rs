use serde::{Deserialize, Serialize};

use super::{inject_with, Hint, HintSet, HintConfig, Suggestion};
use crate::db::{check_results, Database, DbError};
use crate::domain::SqlQuery;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub set: HintSet,
    pub base_cost: f64,
    /// Estimated cost with every kept hint applied.
    pub hinted_cost: f64,
    pub dropped: Vec<(Hint, String)>,
    /// The hinted query, or the input when nothing survived.
    pub query: SqlQuery,
}

/// Keeps the hints that do not raise the estimated cost on their own,
/// composes the survivors under the set's invariants, and confirms that the
/// hinted query returns what the plain one does.
pub fn select_hints(
    candidates: &[Suggestion],
    q: &SqlQuery,
    db: &mut dyn Database,
    cfg: &HintConfig,
) -> Result<Selection, DbError> {
    let base_cost = db.explain(q)?.cost.total_cost;
    let mut set = HintSet::new();
    let mut dropped = Vec::new();
    for s in candidates {
        let single = HintSet { hints: vec![s.hint.clone()] };
        let hinted = match inject_with(q, &single, cfg.materialize_mode) {
            Ok(h) => h,
            Err(e) => {
                dropped.push((s.hint.clone(), e.to_string()));
                continue;
            }
        };
        let cost = match db.explain(&hinted) {
            Ok(ex) => ex.cost.total_cost,
            Err(e @ DbError::Connection(_)) => return Err(e),
            Err(e) => {
                dropped.push((s.hint.clone(), format!("rejected by the server: {e}")));
                continue;
            }
        };
        if cost > base_cost {
            dropped.push((s.hint.clone(), format!("raises estimated cost {base_cost:.2} -> {cost:.2}")));
            continue;
        }
        if let Err(e) = set.push(s.hint.clone()) {
            dropped.push((s.hint.clone(), e.to_string()));
        }
    }
    let query = inject_with(q, &set, cfg.materialize_mode).unwrap_or_else(|_| q.clone());
    if set.is_empty() {
        return Ok(Selection { set, base_cost, hinted_cost: base_cost, dropped, query });
    }
    let hinted_cost = db.explain(&query)?.cost.total_cost;
    let check = check_results(db, q, &query);
    if !check.equal {
        let reason = format!("hinted query changed the result: {}", check.reason.unwrap_or_default());
        dropped.extend(set.hints.drain(..).map(|h| (h, reason.clone())));
        return Ok(Selection { set, base_cost, hinted_cost: base_cost, dropped, query: q.clone() });
    }
    Ok(Selection { set, base_cost, hinted_cost, dropped, query })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintProbe {
    pub extension_loaded: bool,
}

/// Whether hints will steer plans on this server; warns when they cannot.
pub fn probe(db: &mut dyn Database) -> HintProbe {
    let extension_loaded = db.hint_extension_available();
    if !extension_loaded {
        tracing::warn!("pg_hint_plan is not loaded; hint blocks will be ignored by the planner");
    }
    HintProbe { extension_loaded }
}
