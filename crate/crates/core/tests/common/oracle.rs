//! Independent reference computations used by the property suites and the
//! acceptance harness.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use quite::domain::{discounted_return, reward, CostEstimate, Reward};
use quite::kb::{Answer, Category, Corpus, KbEntry, Provenance, Quality, Question, RetrieveOptions};

const K1: f64 = 1.2;
const B: f64 = 0.75;

/// Scores by the textbook formula, one document at a time, with no shared
/// index. Query terms are deduplicated in order of first occurrence.
pub fn bm25_brute_force(docs: &[Vec<String>], query: &[String]) -> Vec<f64> {
    let mut terms: Vec<&String> = Vec::new();
    for t in query {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let n = docs.len() as f64;
    let avg = if docs.is_empty() { 0.0 } else { docs.iter().map(Vec::len).sum::<usize>() as f64 / n };
    docs.iter()
        .map(|d| {
            let norm = if avg > 0.0 { K1 * (1.0 - B + B * d.len() as f64 / avg) } else { K1 };
            let mut s = 0.0;
            for t in &terms {
                let tf = d.iter().filter(|w| w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|x| x.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                s += idf * tf * (K1 + 1.0) / (tf + norm);
            }
            s
        })
        .collect()
}

pub fn entry(id: String, text: &str) -> KbEntry {
    KbEntry {
        id,
        question: Question { text_que: text.into(), sql_que: String::new() },
        answer: Answer { text_ans: "a".into(), sql_ans: "SELECT 1".into() },
        category: Category::Other,
        provenance: Provenance::Fixture,
        quality: Quality::default(),
        unit: None,
        summary: None,
    }
}

/// Random corpus with at most `max_docs` documents over at most
/// `max_terms` distinct words; returns the tokenized docs and a query.
pub fn random_corpus(rng: &mut StdRng, max_docs: usize, max_terms: usize) -> (Vec<Vec<String>>, Vec<String>) {
    let vocab: Vec<String> = (0..rng.gen_range(1..=max_terms)).map(|i| format!("w{i}")).collect();
    let n = rng.gen_range(0..=max_docs);
    let docs = (0..n)
        .map(|_| (0..rng.gen_range(0..12)).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect())
        .collect();
    let query = (0..rng.gen_range(1..6)).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();
    (docs, query)
}

/// Compares the corpus ranking with the brute-force ranking, ties broken
/// by ascending id on both sides. Returns the number of mismatching slots.
pub fn bm25_mismatches(seed: u64) -> usize {
    let mut rng = StdRng::seed_from_u64(seed);
    let (docs, query) = random_corpus(&mut rng, 100, 30);
    let ids: Vec<String> = (0..docs.len()).map(|i| format!("d{i:03}")).collect();
    let corpus = Corpus::new(docs.iter().zip(&ids).map(|(d, id)| entry(id.clone(), &d.join(" "))).collect());
    let oracle = bm25_brute_force(&docs, &query);
    let mut expected: Vec<(f64, &String)> = oracle.iter().copied().zip(&ids).collect();
    expected.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let mut bad = 0;
    for k in [1, 3, docs.len().max(1)] {
        let got = corpus.retrieve(&query.join(" "), &RetrieveOptions { k, category: None, drop_zero: false });
        let want: Vec<&String> = expected.iter().take(k).map(|x| x.1).collect();
        if got.len() != want.len() {
            bad += 1;
            continue;
        }
        for (g, (w, (ws, _))) in got.iter().zip(want.iter().zip(&expected)) {
            if &&g.entry.id != w || (g.score - ws).abs() > 1e-9 * ws.abs().max(1.0) {
                bad += 1;
            }
        }
    }
    bad
}

fn est(c: f64) -> CostEstimate {
    CostEstimate::explain(0.0, c)
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Antisymmetry of every step and telescoping of the undiscounted return.
pub fn reward_chain_holds(costs: &[f64]) -> Result<(), String> {
    let rewards: Vec<Reward> = costs.windows(2).map(|w| reward(&est(w[0]), &est(w[1]))).collect();
    for (w, r) in costs.windows(2).zip(&rewards) {
        let back = reward(&est(w[1]), &est(w[0]));
        if r.value != -back.value {
            return Err(format!("antisymmetry: {} vs {}", r.value, back.value));
        }
    }
    let total = discounted_return(&rewards, 1.0);
    let expect = costs[0] - costs[costs.len() - 1];
    if !close(total, expect) {
        return Err(format!("telescoping: {total} vs {expect} over {costs:?}"));
    }
    Ok(())
}

pub fn random_chain(rng: &mut StdRng) -> Vec<f64> {
    (0..rng.gen_range(1..12)).map(|_| rng.gen_range(0.0..1e6)).collect()
}
