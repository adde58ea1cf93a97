//! Schema retrieval: instruction-wrapped text queries against an index of
//! relation descriptions, plus the contrastive loss and recall@k.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Embedder, EmbeddingVector, IndexMode, SimilarityHit, VectorIndex};
use crate::error::{Error, Result};
use crate::model::Schema;
use crate::par::{self, Execution};

pub const DEFAULT_INSTRUCTION: &str =
    "Instruct: retrieve relations that are present in the given text \n Query: {t}";

const SLOT: &str = "{t}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RetrievalInstruction {
    template: String,
}

impl RetrievalInstruction {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        let count = template.matches(SLOT).count();
        if count != 1 {
            return Err(Error::Config(format!(
                "retrieval instruction must contain {SLOT} exactly once, found {count}"
            )));
        }
        Ok(RetrievalInstruction { template })
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn apply(&self, text: &str) -> String {
        self.template.replacen(SLOT, text, 1)
    }
}

impl Default for RetrievalInstruction {
    fn default() -> Self {
        RetrievalInstruction {
            template: DEFAULT_INSTRUCTION.to_string(),
        }
    }
}

impl TryFrom<String> for RetrievalInstruction {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        RetrievalInstruction::new(s)
    }
}

impl From<RetrievalInstruction> for String {
    fn from(i: RetrievalInstruction) -> Self {
        i.template
    }
}

/// Embeds `texts`, wrapping each one in `instruction` first when given.
pub fn embed(
    embedder: &Embedder,
    texts: &[String],
    instruction: Option<&RetrievalInstruction>,
) -> Result<Vec<EmbeddingVector>> {
    match instruction {
        Some(instr) => {
            let wrapped: Vec<String> = texts.iter().map(|t| instr.apply(t)).collect();
            embedder.embed_texts(&wrapped)
        }
        None => embedder.embed_texts(texts),
    }
}

/// Text representing a relation on the index side.
pub fn relation_text(name: &str, definition: Option<&str>) -> String {
    match definition {
        Some(d) if !d.trim().is_empty() => format!("{name}: {d}"),
        _ => name.to_string(),
    }
}

/// Index over `(name, definition)` pairs, embedded without instruction.
pub fn build_index_from_pairs<'a>(
    pairs: impl IntoIterator<Item = (&'a str, Option<&'a str>)>,
    embedder: &Embedder,
    mode: IndexMode,
) -> Result<VectorIndex> {
    let (names, texts): (Vec<&str>, Vec<String>) = pairs
        .into_iter()
        .map(|(name, def)| (name, relation_text(name, def)))
        .unzip();
    let mut index = VectorIndex::new(mode);
    if names.is_empty() {
        return Ok(index);
    }
    for (name, vector) in names.into_iter().zip(embed(embedder, &texts, None)?) {
        index.insert(name, vector)?;
    }
    Ok(index)
}

pub fn build_relation_index(
    schema: &Schema,
    embedder: &Embedder,
    mode: IndexMode,
) -> Result<VectorIndex> {
    build_index_from_pairs(
        schema
            .iter()
            .map(|d| (d.name.as_str(), Some(d.definition.as_str()))),
        embedder,
        mode,
    )
}

/// Top-`k` relations of `index` for `text` under the default instruction.
pub fn retrieve_relations(
    embedder: &Embedder,
    instruction: &RetrievalInstruction,
    text: &str,
    index: &VectorIndex,
    k: usize,
) -> Result<Vec<SimilarityHit>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let query = embed(embedder, &[text.to_string()], Some(instruction))?;
    index.top_k_with(&query[0], k, Execution::Sequential)
}

/// `-ln(pos / (pos + sum(max(neg, 0))))`, with raw similarities.
pub fn info_nce_loss(positive_sim: f64, negative_sims: &[f64]) -> Result<f64> {
    if !positive_sim.is_finite() || positive_sim <= 0.0 {
        return Err(Error::Domain(format!(
            "positive similarity must be > 0, got {positive_sim}"
        )));
    }
    let mut denom = positive_sim;
    for &n in negative_sims {
        if !n.is_finite() {
            return Err(Error::Domain("negative similarity is not finite".into()));
        }
        denom += n.max(0.0);
    }
    Ok(-(positive_sim / denom).ln())
}

/// The usual temperature-scaled form, `-ln(e^(p/τ) / (e^(p/τ) + Σ e^(n/τ)))`,
/// computed with log-sum-exp.
pub fn info_nce_loss_tempered(
    positive_sim: f64,
    negative_sims: &[f64],
    temperature: f64,
) -> Result<f64> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Domain(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let logits: Vec<f64> = std::iter::once(positive_sim)
        .chain(negative_sims.iter().copied())
        .map(|s| s / temperature)
        .collect();
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Domain("similarity is not finite".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[0])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalPair {
    pub text: String,
    pub gold: Vec<String>,
}

/// recall@k with queries already embedded (one per pair).
pub fn recall_at_k_vectors(
    pairs: &[RetrievalPair],
    queries: &[EmbeddingVector],
    index: &VectorIndex,
    k: usize,
    exec: Execution,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Precondition(
            "recall@k needs at least one pair".into(),
        ));
    }
    if pairs.len() != queries.len() {
        return Err(Error::Precondition(format!(
            "{} pairs but {} query vectors",
            pairs.len(),
            queries.len()
        )));
    }
    for pair in pairs {
        if pair.gold.is_empty() {
            return Err(Error::Precondition(format!(
                "pair without gold relations: {:?}",
                pair.text
            )));
        }
        if let Some(missing) = pair.gold.iter().find(|g| !index.contains(g)) {
            return Err(Error::UnknownGoldRelation(missing.clone()));
        }
    }
    let jobs: Vec<(&RetrievalPair, &EmbeddingVector)> = pairs.iter().zip(queries).collect();
    let recalls = par::try_map(exec, &jobs, |(pair, query)| {
        let hits = index.top_k_with(query, k, Execution::Sequential)?;
        let top: HashSet<&str> = hits.iter().map(|h| h.key.as_str()).collect();
        let gold: HashSet<&str> = pair.gold.iter().map(String::as_str).collect();
        Ok::<_, Error>(gold.iter().filter(|g| top.contains(*g)).count() as f64 / gold.len() as f64)
    })?;
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

pub fn recall_at_k(
    embedder: &Embedder,
    instruction: &RetrievalInstruction,
    pairs: &[RetrievalPair],
    index: &VectorIndex,
    k: usize,
    exec: Execution,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Precondition(
            "recall@k needs at least one pair".into(),
        ));
    }
    let texts: Vec<String> = pairs.iter().map(|p| p.text.clone()).collect();
    let queries = embed(embedder, &texts, Some(instruction))?;
    recall_at_k_vectors(pairs, &queries, index, k, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;

    #[test]
    fn instruction_wraps_text() {
        let instr = RetrievalInstruction::default();
        let q = instr.apply("Alan Shepard was born on Nov 18, 1923.");
        assert!(q.starts_with("Instruct: retrieve relations that are present"));
        assert!(q.ends_with("Query: Alan Shepard was born on Nov 18, 1923."));
        assert!(RetrievalInstruction::new("no slot").is_err());
        assert!(RetrievalInstruction::new("{t} {t}").is_err());
    }

    #[test]
    fn info_nce_hand_values() {
        assert!((info_nce_loss(0.8, &[0.1, 0.1]).unwrap() - 0.223144).abs() < 1e-6);
        assert!((info_nce_loss(0.5, &[0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(info_nce_loss(0.7, &[0.0, -0.3]).unwrap(), 0.0);
        assert!(matches!(info_nce_loss(0.0, &[]), Err(Error::Domain(_))));
        assert!(matches!(info_nce_loss(-0.2, &[0.1]), Err(Error::Domain(_))));
    }

    #[test]
    fn tempered_matches_direct_formula() {
        let (p, negs, t) = (0.6, [0.2, -0.1, 0.4], 0.05);
        let direct = {
            let e = |s: f64| (s / t).exp();
            -(e(p) / (e(p) + negs.iter().map(|n| e(*n)).sum::<f64>())).ln()
        };
        assert!((info_nce_loss_tempered(p, &negs, t).unwrap() - direct).abs() < 1e-9);
    }

    fn unit(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(values.to_vec()).unwrap()
    }

    #[test]
    fn recall_hand_mean() {
        let mut index = VectorIndex::new(IndexMode::TextRelevance);
        index.insert("a", unit(&[1.0, 0.0, 0.0])).unwrap();
        index.insert("b", unit(&[0.0, 1.0, 0.0])).unwrap();
        index.insert("c", unit(&[0.0, 0.0, 1.0])).unwrap();
        let pair = |gold: &[&str]| RetrievalPair {
            text: String::new(),
            gold: gold.iter().map(|s| s.to_string()).collect(),
        };
        let pairs = vec![pair(&["a"]), pair(&["a", "b"]), pair(&["c"])];
        let q = unit(&[1.0, 0.0, 0.0]);
        let queries = vec![q.clone(), q.clone(), q];
        let r = recall_at_k_vectors(&pairs, &queries, &index, 1, Execution::Sequential).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        let bad = vec![pair(&["zzz"])];
        assert!(matches!(
            recall_at_k_vectors(&bad, &queries[..1], &index, 1, Execution::Sequential),
            Err(Error::UnknownGoldRelation(_))
        ));
    }

    #[test]
    fn retrieval_on_small_index() {
        let embedder = Embedder::new(HashingEmbedder::new(64), 1);
        let instr = RetrievalInstruction::default();
        let empty = VectorIndex::new(IndexMode::TextRelevance);
        assert!(matches!(
            retrieve_relations(&embedder, &instr, "x", &empty, 3),
            Err(Error::EmptyIndex)
        ));
        let mut schema = Schema::default();
        schema
            .insert(crate::model::RelationDefinition::new("only", "The only relation.").unwrap())
            .unwrap();
        let index = build_relation_index(&schema, &embedder, IndexMode::TextRelevance).unwrap();
        let hits = retrieve_relations(&embedder, &instr, "anything", &index, 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].key, "only");
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn info_nce_monotone(
                p in 0.01f64..1.0,
                dp in 0.0f64..0.5,
                negs in prop::collection::vec(-1.0f64..1.0, 0..6),
                idx in 0usize..6,
                dn in 0.0f64..0.5,
            ) {
                let base = info_nce_loss(p, &negs).unwrap();
                prop_assert!(info_nce_loss(p + dp, &negs).unwrap() <= base + 1e-12);
                if !negs.is_empty() {
                    let mut bumped = negs.clone();
                    bumped[idx % negs.len()] += dn;
                    prop_assert!(info_nce_loss(p, &bumped).unwrap() >= base - 1e-12);
                }
            }
        }
    }
}
