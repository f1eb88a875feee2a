//! Builds a hint set, renders it, and prepends it to a query in both ways
//! of expressing a non-materialized CTE.

use quite::domain::SqlQuery;
use quite::hints::{inject_with, parse, render, Hint, HintKind, HintSet, MaterializeMode};

fn main() {
    let q = SqlQuery::new("WITH w AS (SELECT deptno, count(*) c FROM emp GROUP BY deptno) SELECT d.dname, w.c FROM dept d JOIN w ON w.deptno = d.deptno").unwrap();
    let mut hs = HintSet::new();
    hs.push(Hint::join_veto(HintKind::NoNestLoop, &["d", "w"], "w is larger than estimated")).unwrap();
    hs.push(Hint::rows(&["d", "w"], 40, "one row per department")).unwrap();
    hs.push(Hint::no_materialize("w", "let the planner push the join key down")).unwrap();

    let block = render(&hs).unwrap();
    println!("{block}\n");
    assert!(parse(&block).unwrap().same_hints(&hs));

    for mode in [MaterializeMode::Hint, MaterializeMode::Compat] {
        println!("-- {mode:?}\n{}\n", inject_with(&q, &hs, mode).unwrap().text());
    }
}
