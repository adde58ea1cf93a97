//! Unit-norm embeddings and a brute-force cosine index.
//!
//! Schemas stay in the hundreds of relations, so a linear scan over the
//! index is all that is needed. Ties in score are broken by insertion order,
//! which keeps every ranking deterministic.

mod client;
pub mod retrieval;

use std::cmp::Ordering;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use client::{
    Embedder, EmbeddingBackend, HashingEmbedder, HttpEmbedding, RecordingEmbedding, ReplayEmbedding,
};
pub use retrieval::{
    build_relation_index, embed, info_nce_loss, info_nce_loss_tempered, recall_at_k,
    recall_at_k_vectors, retrieve_relations, RetrievalInstruction, RetrievalPair,
};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Below this many entries a scan is not worth fanning out.
const PARALLEL_SCAN_MIN: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Scales `values` to unit L2 norm.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "embedding contains a non-finite value".into(),
            ));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(EmbeddingVector(
            values.into_iter().map(|v| v / norm).collect(),
        ))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        EmbeddingVector::normalized(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(dot(&a.0, &b.0).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    /// Relation definitions compared with other definitions.
    DefinitionSimilarity,
    /// Relations scored against an instruction-wrapped input text.
    TextRelevance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHit {
    pub key: String,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    mode: IndexMode,
    entries: IndexMap<String, EmbeddingVector>,
}

impl VectorIndex {
    pub fn new(mode: IndexMode) -> Self {
        VectorIndex {
            mode,
            entries: IndexMap::new(),
        }
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.values().next().map(EmbeddingVector::dim)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: EmbeddingVector) -> Result<()> {
        let key = key.into();
        if let Some(dim) = self.dim() {
            if dim != vector.dim() {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: vector.dim(),
                });
            }
        }
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateKey(key));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    /// Scores every entry against `query`, in insertion order.
    pub fn scores(&self, query: &EmbeddingVector, exec: Execution) -> Result<Vec<f64>> {
        if let Some(dim) = self.dim() {
            if dim != query.dim() {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: query.dim(),
                });
            }
        }
        let exec = if self.len() >= PARALLEL_SCAN_MIN {
            exec
        } else {
            Execution::Sequential
        };
        let vectors: Vec<&EmbeddingVector> = self.entries.values().collect();
        Ok(par::map(exec, &vectors, |v| {
            dot(&v.0, &query.0).clamp(-1.0, 1.0)
        }))
    }

    /// The `min(k, len)` best entries by descending cosine; equal scores
    /// keep insertion order.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SimilarityHit>> {
        self.top_k_with(query, k, Execution::Parallel)
    }

    pub fn top_k_with(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exec: Execution,
    ) -> Result<Vec<SimilarityHit>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let scores = self.scores(query, exec)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        let rank =
            |a: &usize, b: &usize| -> Ordering { scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)) };
        let k = k.min(order.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, rank);
            order.truncate(k);
        }
        order.sort_unstable_by(rank);
        Ok(order
            .into_iter()
            .map(|i| {
                let (key, _) = self.entries.get_index(i).expect("index in range");
                SimilarityHit {
                    key: key.clone(),
                    score: scores[i],
                }
            })
            .collect())
    }
}
