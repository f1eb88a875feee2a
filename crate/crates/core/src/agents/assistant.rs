use super::AgentError;
use crate::corrector::{check_syntax, Corrector, RepairError, Repaired, Verified};
use crate::db::Database;
use crate::domain::SqlQuery;
use crate::llm::AgentLlm;

#[derive(Debug, Clone, PartialEq)]
pub struct Assisted {
    pub verified: Verified,
    /// Set when the candidate needed a syntax repair first.
    pub repaired: Option<Repaired>,
}

/// Syntax check, repair if needed, then the equivalence check. A candidate
/// that cannot be repaired aborts the iteration.
pub fn assistant_verify(
    db: &mut dyn Database,
    original: &SqlQuery,
    candidate: &SqlQuery,
    corrector: &Corrector<'_>,
    llm: &AgentLlm,
) -> Result<Assisted, AgentError> {
    let report = check_syntax(Some(&mut *db), candidate)?;
    let (candidate, repaired) = if report.ok {
        (candidate.clone(), None)
    } else {
        match corrector.repair_syntax(db, candidate, llm) {
            Ok(r) => (r.sql.clone(), Some(r)),
            Err(RepairError::AlreadyValid) => (candidate.clone(), None),
            Err(RepairError::RepairFailed { attempts, last_message }) => {
                return Err(AgentError::RepairAbort { attempts: attempts.len(), message: last_message });
            }
            Err(RepairError::Db(e)) => return Err(e.into()),
        }
    };
    let verified = corrector.verify_equivalence(db, original, &candidate, llm);
    Ok(Assisted { verified, repaired })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::db::StubDatabase;
    use crate::domain::{AgentRole, OutcomeVerdict};
    use crate::llm::{Matcher, ProviderConfig, ScriptRule, ScriptedMock, Transcript};
    use crate::prompt::Prompts;

    fn llm(rules: Vec<ScriptRule>) -> AgentLlm {
        AgentLlm::new(Arc::new(ScriptedMock::new(rules)), ProviderConfig::default(), AgentRole::Assistant, Transcript::new())
    }

    fn q(s: &str) -> SqlQuery {
        SqlQuery::new(s).unwrap()
    }

    #[test]
    fn repairs_then_verifies() {
        let mut db = StubDatabase::new().with_same_results("SELECT a FROM t", "SELECT a FROM t WHERE true");
        let model = llm(vec![
            ScriptRule::new(Matcher::contains("ROLE: repair"), ["```sql\nSELECT a FROM t WHERE true\n```"]),
            ScriptRule::new(Matcher::contains("ROLE: equivalence"), ["VERDICT: EQUIVALENT"]),
        ]);
        let prompts = Prompts::builtin();
        let corrector = Corrector::new(&prompts);
        let out = assistant_verify(&mut db, &q("SELECT a FROM t"), &q("SELECT a FROM t WHER true"), &corrector, &model).unwrap();
        assert!(out.repaired.is_some());
        assert_eq!(out.verified.outcome, OutcomeVerdict::VerifiedLlm);
        assert_eq!(out.verified.sql.text(), "SELECT a FROM t WHERE true");
    }

    #[test]
    fn unrepairable_aborts() {
        let mut db = StubDatabase::new();
        let model = llm(vec![ScriptRule::new(Matcher::contains("ROLE: repair"), ["```sql\nSELEC still broken\n```"]).repeating()]);
        let prompts = Prompts::builtin();
        let corrector = Corrector::new(&prompts);
        let err = assistant_verify(&mut db, &q("SELECT 1"), &q("SELEC 1"), &corrector, &model).unwrap_err();
        assert!(matches!(err, AgentError::RepairAbort { attempts: 3, .. }));
    }
}
