use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Lowercases and splits on anything that is not alphanumeric or `_`, so SQL
/// identifiers such as `sale_id` stay whole. No stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Query terms without repeats, in order of first occurrence.
pub fn unique_terms(query: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for t in tokenize(query) {
        if !seen.contains(&t) {
            seen.push(t);
        }
    }
    seen
}

pub fn idf(n_docs: usize, doc_freq: usize) -> f64 {
    let (n, df) = (n_docs as f64, doc_freq as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Term statistics over a fixed document list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    term_freqs: Vec<HashMap<String, u32>>,
    doc_lens: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn build<S: AsRef<str>>(docs: &[S]) -> Self {
        let mut idx = Bm25Index::default();
        for d in docs {
            let toks = tokenize(d.as_ref());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &toks {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *idx.doc_freq.entry(t.clone()).or_default() += 1;
            }
            idx.doc_lens.push(toks.len());
            idx.term_freqs.push(tf);
        }
        let total: usize = idx.doc_lens.iter().sum();
        idx.avg_len = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        idx
    }

    pub fn len(&self) -> usize {
        self.doc_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_lens.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    /// BM25 score of every document for `query`, indexed like the input docs.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let terms = unique_terms(query);
        let n = self.len();
        let idfs: Vec<f64> = terms.iter().map(|t| idf(n, self.doc_freq(t))).collect();
        (0..n)
            .map(|d| {
                let norm = if self.avg_len > 0.0 {
                    K1 * (1.0 - B + B * self.doc_lens[d] as f64 / self.avg_len)
                } else {
                    K1
                };
                terms.iter().zip(&idfs).fold(0.0, |acc, (t, w)| {
                    let tf = self.term_freqs[d].get(t).copied().unwrap_or(0) as f64;
                    if tf == 0.0 {
                        acc
                    } else {
                        acc + w * tf * (K1 + 1.0) / (tf + norm)
                    }
                })
            })
            .collect()
    }
}
