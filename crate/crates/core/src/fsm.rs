//! The rewrite loop: Reasoning, Verification, Decision, Termination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    assistant_verify, decision_judge, describe_plans, reasoning_generate, rewrite_select_and_enhance, AgentError,
    CostChanges, DecisionReport, RewriteStep, NONE_OBSERVED,
};
use crate::corrector::{check_syntax, Budget, Corrector, ExternalVerifier, DEFAULT_K_MAX};
use crate::db::{Database, DbError, Explained, StatsSnapshot};
use crate::domain::{
    transition, Action, OutcomeVerdict, QueryState, RefinementAction, RefinementKind, RewriteOutcome, SqlQuery,
    Transitioned,
};
use crate::kb::Corpus;
use crate::llm::AgentBindings;
use crate::membuf::{MemoryBuffer, SliceKind, DEFAULT_SLICE_CAP};
use crate::prompt::Prompts;
use crate::sqltext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsmState {
    Reasoning,
    Verification,
    Decision,
    Termination,
}

impl FsmState {
    pub const ALL: [FsmState; 4] = [
        FsmState::Reasoning,
        FsmState::Verification,
        FsmState::Decision,
        FsmState::Termination,
    ];

    /// Legal successors. Verification may also terminate, when the last
    /// allowed iteration aborts or the database goes away.
    pub fn successors(self) -> &'static [FsmState] {
        use FsmState::*;
        match self {
            Reasoning => &[Verification, Termination],
            Verification => &[Decision, Reasoning, Termination],
            Decision => &[Termination, Reasoning],
            Termination => &[],
        }
    }

    pub fn can_move_to(self, to: FsmState) -> bool {
        self.successors().contains(&to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    /// The enhancement step found nothing more to change.
    EarlyStop,
    /// A candidate was handed to verification.
    Proposed,
    Verified,
    RepairAbort,
    /// The corrector could not establish equivalence and fell back.
    Unverified,
    Accepted,
    Rejected,
    BudgetExhausted,
    Failed,
}

impl Cause {
    /// Whether a step with this cause may go `from -> to`.
    pub fn fits(self, from: FsmState, to: FsmState) -> bool {
        use FsmState::*;
        match self {
            Cause::EarlyStop => from == Reasoning && to == Termination,
            Cause::Proposed => from == Reasoning && to == Verification,
            Cause::Verified => from == Verification && to == Decision,
            Cause::RepairAbort | Cause::Unverified => from == Verification && to == Reasoning,
            Cause::Accepted => from == Decision && to == Termination,
            Cause::Rejected => from == Decision && to == Reasoning,
            Cause::BudgetExhausted => matches!(from, Verification | Decision) && to == Termination,
            Cause::Failed => from != Termination && to == Termination,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub from: FsmState,
    pub to: FsmState,
    pub iteration: usize,
    pub cause: Cause,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsmTrace {
    pub steps: Vec<TraceStep>,
}

impl FsmTrace {
    fn push(&mut self, from: FsmState, to: FsmState, iteration: usize, cause: Cause) {
        debug_assert!(from.can_move_to(to) && cause.fits(from, to), "{from:?} -> {to:?} ({cause:?})");
        tracing::debug!(?from, ?to, iteration, ?cause, "fsm step");
        self.steps.push(TraceStep { from, to, iteration, cause });
    }

    /// Entries into Reasoning, counting the initial one.
    pub fn reasoning_entries(&self) -> usize {
        if self.steps.is_empty() {
            return 0;
        }
        1 + self.steps.iter().filter(|s| s.to == FsmState::Reasoning).count()
    }

    pub fn path(&self) -> Vec<FsmState> {
        let mut out: Vec<FsmState> = self.steps.first().map(|s| vec![s.from]).unwrap_or_default();
        out.extend(self.steps.iter().map(|s| s.to));
        out
    }

    pub fn causes(&self) -> Vec<Cause> {
        self.steps.iter().map(|s| s.cause).collect()
    }

    pub fn last_cause(&self) -> Option<Cause> {
        self.steps.last().map(|s| s.cause)
    }

    /// Starts at Reasoning, ends at Termination, every step legal.
    pub fn is_well_formed(&self) -> bool {
        let chained = self.steps.windows(2).all(|w| w[0].to == w[1].from);
        let legal = self.steps.iter().all(|s| s.from.can_move_to(s.to) && s.cause.fits(s.from, s.to));
        chained
            && legal
            && self.steps.first().is_some_and(|s| s.from == FsmState::Reasoning)
            && self.steps.last().is_some_and(|s| s.to == FsmState::Termination)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FsmConfig {
    /// Reasoning re-entries allowed after the initial one.
    pub t_max: usize,
    pub k_max: usize,
    pub budget: Budget,
    pub gamma: f64,
    pub oracle_gate: bool,
    pub slice_cap: usize,
}

impl Default for FsmConfig {
    fn default() -> Self {
        Self {
            t_max: 2,
            k_max: DEFAULT_K_MAX,
            budget: Budget::default(),
            gamma: 1.0,
            oracle_gate: true,
            slice_cap: DEFAULT_SLICE_CAP,
        }
    }
}

#[derive(Debug, Error)]
pub enum FsmError {
    /// The input is not a single read-only query the server accepts.
    #[error("invalid input query: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Connection,
    Llm,
    EmptyChain,
    Database,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl From<&AgentError> for Failure {
    fn from(e: &AgentError) -> Self {
        let kind = match e {
            AgentError::EmptyChain => FailureKind::EmptyChain,
            AgentError::Llm(_) => FailureKind::Llm,
            AgentError::Db(DbError::Connection(_)) => FailureKind::Connection,
            AgentError::Db(_) | AgentError::RepairAbort { .. } => FailureKind::Database,
        };
        Failure { kind, message: e.to_string() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FsmRun {
    pub outcome: RewriteOutcome,
    pub trace: FsmTrace,
    pub failure: Option<Failure>,
    pub iterations: usize,
}

/// Everything one rewrite needs. Agents run strictly one after another.
pub struct RewriteSession<'a> {
    pub db: &'a mut dyn Database,
    pub llms: &'a AgentBindings,
    pub prompts: &'a Prompts,
    pub corpus: &'a Corpus,
    pub verifier: &'a dyn ExternalVerifier,
    pub config: FsmConfig,
}

/// A candidate that reached Decision.
#[derive(Debug, Clone)]
struct Checked {
    sql: SqlQuery,
    explained: Explained,
    outcome: OutcomeVerdict,
    refinements: Vec<RefinementAction>,
}

fn report_without_decision(before: &Explained, after: &Explained, note: &str) -> DecisionReport {
    let (plan_characteristics, resource_utilization) = describe_plans(&before.plan, &after.plan);
    DecisionReport {
        cost_changes: CostChanges {
            before: before.cost,
            after: after.cost,
            delta: before.cost.total_cost - after.cost.total_cost,
        },
        plan_characteristics,
        resource_utilization,
        other_improvements: if note.is_empty() { NONE_OBSERVED.into() } else { note.into() },
        verdict: false,
    }
}

fn refinements_for(step: &RewriteStep, verified: &SqlQuery) -> Vec<RefinementAction> {
    let mut out = Vec::new();
    let mut current: Option<&SqlQuery> = None;
    if let Some(p) = step.selected_proposal() {
        out.push(RefinementAction {
            kind: RefinementKind::infer(&p.description, p.sql.text()),
            description: p.description.clone(),
            resulting_sql: p.sql.clone(),
        });
        current = Some(&p.sql);
    }
    let mut push = |desc: &str, sql: &SqlQuery, current: &mut Option<&SqlQuery>| {
        if current.is_none_or(|c| !c.same_text_as(sql)) {
            out.push(RefinementAction {
                kind: RefinementKind::infer(desc, sql.text()),
                description: desc.into(),
                resulting_sql: sql.clone(),
            });
        }
    };
    push("enhancement", &step.enhanced, &mut current);
    let mut cur = Some(&step.enhanced);
    push("correction", verified, &mut cur);
    out
}

impl<'a> RewriteSession<'a> {
    fn corrector(&self) -> Corrector<'a> {
        Corrector {
            verifier: self.verifier,
            prompts: self.prompts,
            budget: self.config.budget,
            k_max: self.config.k_max,
            oracle_gate: self.config.oracle_gate,
        }
    }

    pub fn run(&mut self, q0: &SqlQuery) -> Result<FsmRun, FsmError> {
        if !sqltext::is_read_only_query(sqltext::split_hint_block(q0.text()).1) {
            return Err(FsmError::InvalidInput("only a single read-only query can be rewritten".into()));
        }
        let mut trace = FsmTrace::default();
        let failed = |trace: &mut FsmTrace, e: DbError| {
            trace.push(FsmState::Reasoning, FsmState::Termination, 0, Cause::Failed);
            Failure::from(&AgentError::Db(e))
        };
        match check_syntax(Some(&mut *self.db), q0) {
            Ok(r) if r.ok => {}
            Ok(r) => return Err(FsmError::InvalidInput(r.server_message.unwrap_or_default())),
            Err(e @ DbError::Connection(_)) => {
                let f = failed(&mut trace, e);
                return Ok(self.failed_without_plan(q0, trace, f));
            }
            Err(e) => return Err(FsmError::InvalidInput(e.to_string())),
        }
        let base = match self.db.explain(q0) {
            Ok(b) => b,
            Err(e) => {
                let f = failed(&mut trace, e);
                return Ok(self.failed_without_plan(q0, trace, f));
            }
        };
        let tables = sqltext::referenced_tables(q0.text());
        let stats = match self.db.snapshot_stats(&tables) {
            Ok(s) => s,
            Err(DbError::Connection(m)) => {
                trace.push(FsmState::Reasoning, FsmState::Termination, 0, Cause::Failed);
                let failure = Failure { kind: FailureKind::Connection, message: m };
                return Ok(self.finish_original(q0, &base, trace, Some(failure), 0, Vec::new()));
            }
            Err(e) => {
                tracing::debug!(error = %e, "no statistics for some tables");
                StatsSnapshot::default()
            }
        };

        let mut buffer = MemoryBuffer::new(self.config.slice_cap);
        let mut checked: Vec<Checked> = Vec::new();
        let mut knowledge: Vec<String> = Vec::new();
        let mut t = 0usize;

        loop {
            // Reasoning: chain, selection, enhancement.
            let step = match self.reason(q0, &base, &stats, &buffer, t) {
                Ok(s) => s,
                Err(e) => {
                    trace.push(FsmState::Reasoning, FsmState::Termination, t, Cause::Failed);
                    return Ok(self.finish_original(q0, &base, trace, Some(Failure::from(&e)), t, knowledge));
                }
            };
            buffer.put(SliceKind::RewriteProposals, &step.render_proposals(), t);

            if step.early_stop || step.enhanced.same_text_as(q0) {
                trace.push(FsmState::Reasoning, FsmState::Termination, t, Cause::EarlyStop);
                return Ok(self.finish_early(q0, &base, &step, checked, trace, t, knowledge));
            }
            trace.push(FsmState::Reasoning, FsmState::Verification, t, Cause::Proposed);

            // Verification.
            let corrector = self.corrector();
            let verdict = assistant_verify(self.db, q0, &step.enhanced, &corrector, &self.llms.assistant);
            let abort_cause = match verdict {
                Ok(a) if !a.verified.is_fallback() => match self.db.explain(&a.verified.sql) {
                    Ok(explained) => {
                        trace.push(FsmState::Verification, FsmState::Decision, t, Cause::Verified);
                        let candidate = Checked {
                            refinements: refinements_for(&step, &a.verified.sql),
                            sql: a.verified.sql,
                            explained,
                            outcome: a.verified.outcome,
                        };
                        // Decision.
                        let judged = decision_judge(
                            q0,
                            &candidate.sql,
                            &base,
                            &candidate.explained,
                            &mut buffer,
                            t,
                            self.corpus,
                            &self.llms.decision,
                            self.prompts,
                        );
                        match judged {
                            Ok(j) if j.report.verdict => {
                                trace.push(FsmState::Decision, FsmState::Termination, t, Cause::Accepted);
                                return Ok(self.finish(q0, candidate, j.report, trace, t, knowledge));
                            }
                            Ok(j) => {
                                for id in j.retrieved {
                                    if !knowledge.contains(&id) {
                                        knowledge.push(id);
                                    }
                                }
                                checked.push(candidate);
                                if t >= self.config.t_max {
                                    trace.push(FsmState::Decision, FsmState::Termination, t, Cause::BudgetExhausted);
                                    return Ok(self.finish_best(q0, &base, checked, trace, t, knowledge));
                                }
                                trace.push(FsmState::Decision, FsmState::Reasoning, t, Cause::Rejected);
                                t += 1;
                                continue;
                            }
                            Err(e) => {
                                trace.push(FsmState::Decision, FsmState::Termination, t, Cause::Failed);
                                return Ok(self.finish_original(q0, &base, trace, Some(Failure::from(&e)), t, knowledge));
                            }
                        }
                    }
                    Err(e @ DbError::Connection(_)) => {
                        trace.push(FsmState::Verification, FsmState::Termination, t, Cause::Failed);
                        let f = Failure::from(&AgentError::Db(e));
                        return Ok(self.finish_original(q0, &base, trace, Some(f), t, knowledge));
                    }
                    Err(_) => Cause::Unverified,
                },
                Ok(_) => Cause::Unverified,
                Err(AgentError::RepairAbort { .. }) => Cause::RepairAbort,
                Err(e) => {
                    trace.push(FsmState::Verification, FsmState::Termination, t, Cause::Failed);
                    return Ok(self.finish_original(q0, &base, trace, Some(Failure::from(&e)), t, knowledge));
                }
            };
            if t >= self.config.t_max {
                trace.push(FsmState::Verification, FsmState::Termination, t, Cause::BudgetExhausted);
                return Ok(self.finish_best(q0, &base, checked, trace, t, knowledge));
            }
            trace.push(FsmState::Verification, FsmState::Reasoning, t, abort_cause);
            t += 1;
        }
    }

    fn reason(
        &mut self,
        q0: &SqlQuery,
        base: &Explained,
        stats: &StatsSnapshot,
        buffer: &MemoryBuffer,
        t: usize,
    ) -> Result<RewriteStep, AgentError> {
        let chain = reasoning_generate(q0, stats, &base.plan, buffer, t, &self.llms.reasoning, self.prompts)?;
        rewrite_select_and_enhance(
            q0,
            base.cost,
            &chain,
            self.db,
            buffer,
            self.config.gamma,
            &self.llms.rewrite,
            self.prompts,
        )
    }

    /// Early stop still has to clear the corrector before anything but the
    /// original leaves the loop.
    #[allow(clippy::too_many_arguments)]
    fn finish_early(
        &mut self,
        q0: &SqlQuery,
        base: &Explained,
        step: &RewriteStep,
        mut checked: Vec<Checked>,
        mut trace: FsmTrace,
        t: usize,
        knowledge: Vec<String>,
    ) -> FsmRun {
        if !step.enhanced.same_text_as(q0) {
            let corrector = self.corrector();
            match assistant_verify(self.db, q0, &step.enhanced, &corrector, &self.llms.assistant) {
                Ok(a) if !a.verified.is_fallback() => match self.db.explain(&a.verified.sql) {
                    Ok(explained) => checked.push(Checked {
                        refinements: refinements_for(step, &a.verified.sql),
                        sql: a.verified.sql,
                        explained,
                        outcome: a.verified.outcome,
                    }),
                    Err(e @ DbError::Connection(_)) => {
                        trace.steps.last_mut().unwrap().cause = Cause::Failed;
                        let f = Failure::from(&AgentError::Db(e));
                        return self.finish_original(q0, base, trace, Some(f), t, knowledge);
                    }
                    Err(_) => {}
                },
                Err(e @ AgentError::Db(DbError::Connection(_))) => {
                    trace.steps.last_mut().unwrap().cause = Cause::Failed;
                    return self.finish_original(q0, base, trace, Some(Failure::from(&e)), t, knowledge);
                }
                _ => {}
            }
        }
        self.finish_best(q0, base, checked, trace, t, knowledge)
    }

    /// Cheapest verified candidate, or the original when none is cheaper.
    fn finish_best(
        &mut self,
        q0: &SqlQuery,
        base: &Explained,
        checked: Vec<Checked>,
        trace: FsmTrace,
        t: usize,
        knowledge: Vec<String>,
    ) -> FsmRun {
        let best = checked
            .into_iter()
            .filter(|c| c.explained.cost.total_cost < base.cost.total_cost)
            .min_by(|a, b| a.explained.cost.total_cost.total_cmp(&b.explained.cost.total_cost));
        let note = match trace.last_cause() {
            Some(Cause::EarlyStop) => "not judged: rewriting stopped early",
            _ => "not judged: iteration budget exhausted",
        };
        match best {
            Some(c) => {
                let report = report_without_decision(base, &c.explained, note);
                self.finish(q0, c, report, trace, t, knowledge)
            }
            None => {
                let mut run = self.finish_original(q0, base, trace, None, t, knowledge);
                run.outcome.report.other_improvements = note.into();
                run
            }
        }
    }

    fn finish(
        &self,
        q0: &SqlQuery,
        c: Checked,
        report: DecisionReport,
        trace: FsmTrace,
        t: usize,
        knowledge: Vec<String>,
    ) -> FsmRun {
        let mut state = QueryState::initial(q0.clone());
        for r in c.refinements {
            if let Transitioned::State(s) = transition(&state, Action::Refine(r)) {
                state = s;
            }
        }
        let final_sql = match transition(&state, Action::Terminal) {
            Transitioned::Final(sql) => sql,
            Transitioned::State(_) => unreachable!(),
        };
        debug_assert!(final_sql.same_text_as(&c.sql));
        FsmRun {
            outcome: RewriteOutcome {
                final_sql: c.sql,
                cost: c.explained.cost,
                report,
                proposals: state.applied_refinements,
                equivalence_verdict: c.outcome,
                advanced_knowledge: knowledge,
            },
            trace,
            failure: None,
            iterations: t + 1,
        }
    }

    fn finish_original(
        &self,
        q0: &SqlQuery,
        base: &Explained,
        trace: FsmTrace,
        failure: Option<Failure>,
        t: usize,
        knowledge: Vec<String>,
    ) -> FsmRun {
        let note = failure.as_ref().map(|f| format!("not judged: {}", f.message)).unwrap_or_default();
        FsmRun {
            outcome: RewriteOutcome {
                final_sql: q0.clone(),
                cost: base.cost,
                report: report_without_decision(base, base, &note),
                proposals: Vec::new(),
                equivalence_verdict: OutcomeVerdict::FallbackOriginal,
                advanced_knowledge: knowledge,
            },
            trace,
            failure,
            iterations: t + 1,
        }
    }

    fn failed_without_plan(&self, q0: &SqlQuery, trace: FsmTrace, failure: Failure) -> FsmRun {
        let nothing = Explained::new(crate::db::PlanTree::empty());
        self.finish_original(q0, &nothing, trace, Some(failure), 0, Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{HashSet, VecDeque};

    use super::*;

    #[test]
    fn termination_reachable_from_every_state() {
        for s in FsmState::ALL {
            let mut seen = HashSet::new();
            let mut queue = VecDeque::from([s]);
            while let Some(x) = queue.pop_front() {
                if seen.insert(x) {
                    queue.extend(x.successors().iter().copied());
                }
            }
            assert!(seen.contains(&FsmState::Termination), "{s:?}");
        }
        assert!(FsmState::Termination.successors().is_empty());
    }

    #[test]
    fn every_cause_names_a_legal_edge() {
        let causes = [
            Cause::EarlyStop,
            Cause::Proposed,
            Cause::Verified,
            Cause::RepairAbort,
            Cause::Unverified,
            Cause::Accepted,
            Cause::Rejected,
            Cause::BudgetExhausted,
            Cause::Failed,
        ];
        for c in causes {
            let mut any = false;
            for a in FsmState::ALL {
                for b in FsmState::ALL {
                    if c.fits(a, b) {
                        assert!(a.can_move_to(b), "{c:?} {a:?}->{b:?}");
                        any = true;
                    }
                }
            }
            assert!(any, "{c:?}");
        }
    }
}
