use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bm25::tokenize;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("embedding failed: {0}")]
pub struct EmbedError(pub String);

pub trait Embedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
}

/// Deterministic stand-in for a sentence embedding model: a hashed bag of
/// words, L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x100_0000_01b3))
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError("zero dimension".into()));
        }
        let mut v = vec![0f32; self.dim];
        for t in tokenize(text) {
            v[(fnv1a(t.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// Cosine similarity; 0 when either vector is all zeros.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// A key point extracted from official documentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocPoint {
    pub id: String,
    pub text: String,
}

/// Documentation points with precomputed embeddings.
#[derive(Debug, Clone, Default)]
pub struct DocIndex {
    points: Vec<(DocPoint, Vec<f32>)>,
}

impl DocIndex {
    pub fn build(points: Vec<DocPoint>, embedder: &dyn Embedder) -> Result<Self, EmbedError> {
        let points = points
            .into_iter()
            .map(|p| embedder.embed(&p.text).map(|v| (p, v)))
            .collect::<Result<_, _>>()?;
        Ok(Self { points })
    }

    /// Reads a JSON-lines file of `{"id": .., "text": ..}` points.
    pub fn load_points(path: &std::path::Path) -> std::io::Result<Vec<DocPoint>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` most similar points, most similar first; ties keep index order.
    pub fn top_k(&self, query: &[f32], k: usize) -> Vec<(&DocPoint, f32)> {
        let mut scored: Vec<(usize, f32)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, (_, v))| (i, cosine(query, v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (&self.points[i].0, s))
            .collect()
    }
}
