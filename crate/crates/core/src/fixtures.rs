//! Seeded desk-scale schema and the three worked rewrite examples.
//!
//! Data is generated with modular arithmetic, so every seed of the same
//! scale produces identical rows.

use crate::domain::SqlQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub sale: u64,
    pub prod: u64,
    pub ttime: u64,
    pub emp: u64,
    pub dept: u64,
    pub t: u64,
}

impl Default for Scale {
    fn default() -> Self {
        Self { sale: 100_000, prod: 1_000, ttime: 10_000, emp: 10_000, dept: 100, t: 1_000 }
    }
}

impl Scale {
    /// Small enough for unit-speed tests.
    pub fn tiny() -> Self {
        Self { sale: 5_000, prod: 300, ttime: 200, emp: 300, dept: 10, t: 100 }
    }
}

pub const TABLES: [&str; 6] = ["sale", "prod", "ttime", "emp", "dept", "t"];

/// Drops and recreates the schema, loads it and refreshes statistics.
pub fn seed_sql(scale: &Scale) -> String {
    let Scale { sale, prod, ttime, emp, dept, t } = *scale;
    format!(
        "DROP TABLE IF EXISTS sale, prod, ttime, emp, dept, t CASCADE;
CREATE TABLE prod (p_id int PRIMARY KEY, p_category text NOT NULL, p_price numeric(10,2) NOT NULL);
CREATE TABLE ttime (t_id int PRIMARY KEY, t_year int NOT NULL, t_month int NOT NULL);
CREATE TABLE sale (
  s_id int PRIMARY KEY,
  s_prod int NOT NULL REFERENCES prod,
  s_time int NOT NULL REFERENCES ttime,
  s_amount numeric(10,2) NOT NULL
);
CREATE INDEX sale_prod_idx ON sale (s_prod);
CREATE TABLE dept (deptno int PRIMARY KEY, dname text NOT NULL);
CREATE TABLE emp (
  empno int PRIMARY KEY,
  ename text NOT NULL,
  deptno int NOT NULL REFERENCES dept,
  sal numeric(10,2) NOT NULL
);
CREATE TABLE t (a int NOT NULL);
INSERT INTO prod SELECT i, 'cat_' || (i % 100), 1 + ((i * 37) % 1000) / 10.0 FROM generate_series(1, {prod}) i;
INSERT INTO ttime SELECT i, 2000 + (i % 20), 1 + (i % 12) FROM generate_series(1, {ttime}) i;
INSERT INTO sale
  SELECT i, p, tm, ((i::bigint * 31) % 1000) / 100.0 * (1 + (p * 3) % 7)
  FROM (SELECT i, 1 + ((i::bigint * 7919) % {prod}) AS p, 1 + ((i::bigint * 104729) % {ttime}) AS tm
        FROM generate_series(1, {sale}) i) g;
INSERT INTO dept SELECT i, 'dept_' || i FROM generate_series(1, {dept}) i;
INSERT INTO emp SELECT i, 'emp_' || i, 1 + ((i * 13) % {dept}), 1000 + (i * 17) % 5000 FROM generate_series(1, {emp}) i;
INSERT INTO t SELECT i FROM generate_series(1, {t}) i;
ANALYZE;
"
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Shared subresults moved into CTEs.
    CteConversion,
    /// Joins that do not contribute to the result removed.
    JoinElimination,
    /// The selective join done first.
    JoinReorder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub id: &'static str,
    pub strategy: Strategy,
    pub original: SqlQuery,
    /// A hand-written equivalent rewrite.
    pub rewritten: SqlQuery,
}

fn q(s: &str) -> SqlQuery {
    SqlQuery::new(s).expect("fixture SQL is non-empty")
}

/// Products whose sales exceed 1.2x their category average, computed with
/// a correlated subquery per group.
pub const EXAMPLE1_ORIGINAL: &str = "SELECT s1.s_prod, sum(s1.s_amount) AS total
FROM sale s1
GROUP BY s1.s_prod
HAVING sum(s1.s_amount) > (
  SELECT 1.2 * avg(x.total)
  FROM (SELECT s2.s_prod, sum(s2.s_amount) AS total
        FROM sale s2 JOIN prod p2 ON s2.s_prod = p2.p_id
        WHERE p2.p_category = (SELECT p3.p_category FROM prod p3 WHERE p3.p_id = s1.s_prod)
        GROUP BY s2.s_prod) x
)";

pub const EXAMPLE1_REWRITTEN: &str = "WITH prod_total AS (
  SELECT s.s_prod, p.p_category, sum(s.s_amount) AS total
  FROM sale s JOIN prod p ON s.s_prod = p.p_id
  GROUP BY s.s_prod, p.p_category
), cat_avg AS (
  SELECT p_category, 1.2 * avg(total) AS threshold
  FROM prod_total
  GROUP BY p_category
)
SELECT pt.s_prod, pt.total
FROM prod_total pt JOIN cat_avg c ON pt.p_category = c.p_category
WHERE pt.total > c.threshold";

/// Total salary, reached through joins and a subquery that cannot filter
/// anything out given the foreign key.
pub const EXAMPLE2_ORIGINAL: &str = "SELECT sum(e.sal) AS total_sal
FROM emp e JOIN dept d ON e.deptno = d.deptno
WHERE EXISTS (SELECT 1 FROM dept d2 WHERE d2.deptno = e.deptno AND d2.deptno = d.deptno)";

pub const EXAMPLE2_REWRITTEN: &str = "SELECT sum(e.sal) AS total_sal FROM emp e";

/// Yearly sales of one category, joining the two large tables first.
pub const EXAMPLE3_ORIGINAL: &str = "SELECT t.t_year, sum(s.s_amount) AS total
FROM sale s JOIN ttime t ON s.s_time = t.t_id JOIN prod p ON s.s_prod = p.p_id
WHERE p.p_category = 'cat_3'
GROUP BY t.t_year";

pub const EXAMPLE3_REWRITTEN: &str = "SELECT t.t_year, sum(sp.s_amount) AS total
FROM (SELECT s.s_time, s.s_amount
      FROM sale s JOIN prod p ON s.s_prod = p.p_id
      WHERE p.p_category = 'cat_3') sp
JOIN ttime t ON sp.s_time = t.t_id
GROUP BY t.t_year";

pub fn examples() -> Vec<Fixture> {
    vec![
        Fixture { id: "example1", strategy: Strategy::CteConversion, original: q(EXAMPLE1_ORIGINAL), rewritten: q(EXAMPLE1_REWRITTEN) },
        Fixture { id: "example2", strategy: Strategy::JoinElimination, original: q(EXAMPLE2_ORIGINAL), rewritten: q(EXAMPLE2_REWRITTEN) },
        Fixture { id: "example3", strategy: Strategy::JoinReorder, original: q(EXAMPLE3_ORIGINAL), rewritten: q(EXAMPLE3_REWRITTEN) },
    ]
}

pub fn example(id: &str) -> Option<Fixture> {
    examples().into_iter().find(|f| f.id == id)
}

/// Ten small queries over the seeded schema, each with an equivalent
/// rewrite, for harness tests.
pub fn workload() -> Vec<(String, SqlQuery, SqlQuery)> {
    let pairs = [
        ("w01", "SELECT a FROM t WHERE a > 500 AND a > 400", "SELECT a FROM t WHERE a > 500"),
        ("w02", "SELECT count(*) FROM t WHERE 1 = 1 AND a < 100", "SELECT count(*) FROM t WHERE a < 100"),
        ("w03", "SELECT p_id FROM prod WHERE p_id IN (SELECT p_id FROM prod WHERE p_category = 'cat_1')", "SELECT p_id FROM prod WHERE p_category = 'cat_1'"),
        ("w04", "SELECT d.dname FROM dept d WHERE d.deptno IN (SELECT e.deptno FROM emp e)", "SELECT d.dname FROM dept d WHERE EXISTS (SELECT 1 FROM emp e WHERE e.deptno = d.deptno)"),
        ("w05", "SELECT t_year, count(*) FROM ttime WHERE t_month + 0 = 3 GROUP BY t_year", "SELECT t_year, count(*) FROM ttime WHERE t_month = 3 GROUP BY t_year"),
        ("w06", "SELECT DISTINCT p_category FROM prod", "SELECT p_category FROM prod GROUP BY p_category"),
        ("w07", "SELECT a FROM t WHERE a BETWEEN 10 AND 20 OR a BETWEEN 15 AND 30", "SELECT a FROM t WHERE a BETWEEN 10 AND 30"),
        ("w08", "SELECT e.ename FROM emp e JOIN dept d ON e.deptno = d.deptno WHERE e.sal > 5900", "SELECT e.ename FROM emp e WHERE e.sal > 5900"),
        ("w09", "SELECT max(a) FROM (SELECT a FROM t) s", "SELECT max(a) FROM t"),
        ("w10", "SELECT count(*) FROM sale WHERE s_amount * 2 > 100", "SELECT count(*) FROM sale WHERE s_amount > 50"),
    ];
    pairs.iter().map(|(id, a, b)| (id.to_string(), q(a), q(b))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqltext;

    #[test]
    fn every_fixture_parses() {
        for f in examples() {
            assert!(sqltext::is_read_only_query(f.original.text()), "{}", f.id);
            assert!(sqltext::is_read_only_query(f.rewritten.text()), "{}", f.id);
        }
        for (id, a, b) in workload() {
            assert!(sqltext::check_grammar(a.text()).is_ok(), "{id}");
            assert!(sqltext::check_grammar(b.text()).is_ok(), "{id}");
        }
    }

    #[test]
    fn example1_rewrite_uses_ctes() {
        let f = example("example1").unwrap();
        assert!(f.rewritten.text().starts_with("WITH"));
        assert_eq!(sqltext::ctes(f.rewritten.text()).len(), 2);
    }

    #[test]
    fn seed_is_deterministic() {
        assert_eq!(seed_sql(&Scale::tiny()), seed_sql(&Scale::tiny()));
        assert!(seed_sql(&Scale::default()).contains("generate_series(1, 100000)"));
    }
}
