//! Token-level triplet scoring and schema quality metrics.
//!
//! Every element is tokenized (camel-case split, lowercased, surrounding
//! punctuation stripped). Two elements are *correct* when their token
//! sequences are equal and a *partial match* when they merely share a token.
//! Candidate and reference triplets of a document are paired one-to-one by
//! an optimal assignment, and the element credit of every pair depends on
//! the criterion:
//!
//! | criterion | slots              | partial match |
//! |-----------|--------------------|---------------|
//! | strict    | must correspond    | 0             |
//! | exact     | best permutation   | 0             |
//! | partial   | best permutation   | 0.5           |
//!
//! Precision and recall are micro-averaged over elements.

use std::collections::{BTreeMap, HashMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::embedding::VectorIndex;
use crate::model::{ExtractionRecord, Triplet, WarningCounts};
use crate::par::{self, Execution};
use crate::text::split_camel_case;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchCriterion {
    Exact,
    Partial,
    Strict,
}

impl MatchCriterion {
    pub const ALL: [MatchCriterion; 3] = [
        MatchCriterion::Exact,
        MatchCriterion::Partial,
        MatchCriterion::Strict,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MatchCriterion::Exact => "exact",
            MatchCriterion::Partial => "partial",
            MatchCriterion::Strict => "strict",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementJudgment {
    Correct,
    PartialMatch,
    Incorrect,
    Missed,
    Spurious,
}

pub fn tokenize(element: &str) -> Vec<String> {
    split_camel_case(element)
        .to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn judge_tokens(candidate: &[String], reference: &[String]) -> ElementJudgment {
    if candidate == reference {
        return ElementJudgment::Correct;
    }
    let reference: HashSet<&String> = reference.iter().collect();
    if candidate.iter().any(|t| reference.contains(t)) {
        ElementJudgment::PartialMatch
    } else {
        ElementJudgment::Incorrect
    }
}

pub fn judge_element(candidate: &str, reference: &str) -> ElementJudgment {
    judge_tokens(&tokenize(candidate), &tokenize(reference))
}

fn credit(judgment: ElementJudgment, criterion: MatchCriterion) -> f64 {
    match (judgment, criterion) {
        (ElementJudgment::Correct, _) => 1.0,
        (ElementJudgment::PartialMatch, MatchCriterion::Partial) => 0.5,
        _ => 0.0,
    }
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

type Tokens = [Vec<String>; 3];

fn tokens_of(t: &Triplet) -> Tokens {
    t.elements().map(tokenize)
}

/// Best element judgments for one aligned pair: `out[i]` judges candidate
/// slot `i` against the reference slot the criterion pairs it with.
fn pair_judgments(
    c: &Tokens,
    r: &Tokens,
    criterion: MatchCriterion,
) -> ([ElementJudgment; 3], f64) {
    let judged = |perm: &[usize; 3]| {
        let js = [0, 1, 2].map(|i| judge_tokens(&c[i], &r[perm[i]]));
        let score = js.iter().map(|j| credit(*j, criterion)).sum::<f64>();
        (js, score)
    };
    if criterion == MatchCriterion::Strict {
        return judged(&PERMUTATIONS[0]);
    }
    PERMUTATIONS
        .iter()
        .map(judged)
        .fold(
            None,
            |best: Option<([ElementJudgment; 3], f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            },
        )
        .expect("six permutations")
}

/// Credit of aligning candidate `c` with reference `r` under `criterion`.
pub fn pair_score(c: &Triplet, r: &Triplet, criterion: MatchCriterion) -> f64 {
    pair_judgments(&tokens_of(c), &tokens_of(r), criterion).1
}

/// Maximum-weight assignment of rows to columns. Returns, for each row, its
/// column (every row is assigned when rows <= columns).
fn max_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = weights.len();
    let m = weights.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    if n > m {
        let transposed: Vec<Vec<f64>> = (0..m)
            .map(|j| (0..n).map(|i| weights[i][j]).collect())
            .collect();
        let cols = max_assignment(&transposed);
        let mut rows = vec![None; n];
        for (j, i) in cols.into_iter().enumerate() {
            if let Some(i) = i {
                rows[i] = Some(j);
            }
        }
        return rows;
    }
    // Shortest augmenting path form of the Hungarian method on costs
    // -weight, 1-based with a virtual column 0.
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            rows[p[j] - 1] = Some(j - 1);
        }
    }
    rows
}

/// Per-document score: credited elements and the element totals on each side.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DocumentScore {
    pub weighted_correct: f64,
    pub candidate_elements: usize,
    pub reference_elements: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDocument {
    pub score: DocumentScore,
    /// `(candidate index, reference index)` for every aligned pair.
    pub alignment: Vec<(usize, usize)>,
    pub judgments: HashMap<ElementJudgment, usize>,
}

pub fn score_document_detailed(
    candidates: &[Triplet],
    references: &[Triplet],
    criterion: MatchCriterion,
) -> ScoredDocument {
    let ct: Vec<Tokens> = candidates.iter().map(tokens_of).collect();
    let rt: Vec<Tokens> = references.iter().map(tokens_of).collect();
    let pairs: Vec<Vec<([ElementJudgment; 3], f64)>> = ct
        .iter()
        .map(|c| rt.iter().map(|r| pair_judgments(c, r, criterion)).collect())
        .collect();
    let weights: Vec<Vec<f64>> = pairs
        .iter()
        .map(|row| row.iter().map(|p| p.1).collect())
        .collect();
    let assignment = max_assignment(&weights);
    let mut judgments: HashMap<ElementJudgment, usize> = HashMap::new();
    let mut weighted = 0.0;
    let mut alignment = Vec::new();
    for (i, j) in assignment.iter().enumerate() {
        match j {
            Some(j) => {
                let (js, score) = pairs[i][*j];
                weighted += score;
                alignment.push((i, *j));
                for jd in js {
                    *judgments.entry(jd).or_default() += 1;
                }
            }
            None => *judgments.entry(ElementJudgment::Spurious).or_default() += 3,
        }
    }
    let missed = 3 * (references.len() - alignment.len());
    if missed > 0 {
        *judgments.entry(ElementJudgment::Missed).or_default() += missed;
    }
    ScoredDocument {
        score: DocumentScore {
            weighted_correct: weighted,
            candidate_elements: 3 * candidates.len(),
            reference_elements: 3 * references.len(),
        },
        alignment,
        judgments,
    }
}

pub fn score_document(
    candidates: &[Triplet],
    references: &[Triplet],
    criterion: MatchCriterion,
) -> DocumentScore {
    score_document_detailed(candidates, references, criterion).score
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            precision,
            recall,
            f1,
        }
    }
}

/// Micro-averaged metrics and any degenerate-denominator warnings.
pub fn aggregate(scores: &[DocumentScore]) -> (Metrics, Vec<String>) {
    let weighted: f64 = scores.iter().map(|s| s.weighted_correct).sum();
    let cand: usize = scores.iter().map(|s| s.candidate_elements).sum();
    let refs: usize = scores.iter().map(|s| s.reference_elements).sum();
    let mut warnings = Vec::new();
    let precision = if cand == 0 {
        warnings.push("no candidate elements; precision set to 0".to_string());
        0.0
    } else {
        weighted / cand as f64
    };
    let recall = if refs == 0 {
        warnings.push("no reference elements; recall set to 0".to_string());
        0.0
    } else {
        weighted / refs as f64
    };
    (Metrics::new(precision, recall), warnings)
}

/// Mean over entries of the cosine to their nearest other entry.
pub fn redundancy_score(index: &VectorIndex) -> f64 {
    redundancy_score_with(index, Execution::Parallel)
}

pub fn redundancy_score_with(index: &VectorIndex, exec: Execution) -> f64 {
    let vectors: Vec<&[f64]> = index.entries().map(|(_, v)| v.values()).collect();
    let n = vectors.len();
    if n <= 1 {
        return 0.0;
    }
    let nearest = par::map_indexed(exec, n, |i| {
        (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d: f64 = vectors[i].iter().zip(vectors[j]).map(|(a, b)| a * b).sum();
                d.clamp(-1.0, 1.0)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    });
    nearest.iter().sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemaStats {
    pub schema_size: usize,
    pub avg_triplets_per_sentence: f64,
}

/// Keeps the highest-iteration record of every document, in first-seen
/// document order.
pub fn final_records(records: &[ExtractionRecord]) -> Vec<&ExtractionRecord> {
    let mut last: IndexMap<&str, &ExtractionRecord> = IndexMap::new();
    for r in records {
        let slot = last.entry(r.document_id.as_str()).or_insert(r);
        if r.iteration >= slot.iteration {
            *slot = r;
        }
    }
    last.into_values().collect()
}

pub fn schema_stats(schema_size: usize, final_records: &[&ExtractionRecord]) -> SchemaStats {
    let total: usize = final_records
        .iter()
        .map(|r| r.canonical_triplets.len())
        .sum();
    SchemaStats {
        schema_size,
        avg_triplets_per_sentence: if final_records.is_empty() {
            0.0
        } else {
            total as f64 / final_records.len() as f64
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub criteria: BTreeMap<MatchCriterion, Metrics>,
    pub schema_size: usize,
    /// Absent when no embedding backend was available to embed the schema.
    pub redundancy: Option<f64>,
    pub avg_triplets_per_sentence: f64,
    pub documents_scored: usize,
    pub warnings: WarningCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Scores `pairs` of (candidate, reference) triplet lists under each of
/// `criteria`, in parallel across documents.
pub fn score_corpus(
    pairs: &[(&[Triplet], &[Triplet])],
    criteria: &[MatchCriterion],
    exec: Execution,
) -> (BTreeMap<MatchCriterion, Metrics>, Vec<String>) {
    let per_doc = par::map(exec, pairs, |(c, r)| {
        criteria
            .iter()
            .map(|k| score_document(c, r, *k))
            .collect::<Vec<_>>()
    });
    let mut out = BTreeMap::new();
    let mut notes = Vec::new();
    for (ci, criterion) in criteria.iter().enumerate() {
        let scores: Vec<DocumentScore> = per_doc.iter().map(|d| d[ci]).collect();
        let (m, w) = aggregate(&scores);
        notes.extend(w.into_iter().map(|w| format!("{}: {w}", criterion.name())));
        out.insert(*criterion, m);
    }
    (out, notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingVector, IndexMode};

    fn t(s: &str, r: &str, o: &str) -> Triplet {
        Triplet::new(s, r, o).unwrap()
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("birthDate"), vec!["birth", "date"]);
        assert_eq!(tokenize("  \"Apollo 14\", "), vec!["apollo", "14"]);
        assert_eq!(tokenize("Nov 18, 1923"), vec!["nov", "18", "1923"]);
    }

    #[test]
    fn partial_apollo_case() {
        let c = [t("Alan Shepard", "mission", "Apollo 14")];
        let r = [t("Alan Shepard", "mission", "Apollo 14 crew")];
        assert_eq!(
            score_document(&c, &r, MatchCriterion::Partial).weighted_correct,
            2.5
        );
        assert_eq!(
            score_document(&c, &r, MatchCriterion::Exact).weighted_correct,
            2.0
        );
        assert_eq!(
            score_document(&c, &r, MatchCriterion::Strict).weighted_correct,
            2.0
        );
    }

    #[test]
    fn camel_case_partially_matches_phrase() {
        assert_eq!(
            judge_element("birthDate", "birth date"),
            ElementJudgment::Correct
        );
        assert_eq!(
            judge_element("birthPlace", "birth date"),
            ElementJudgment::PartialMatch
        );
    }

    #[test]
    fn exact_ignores_slots_strict_does_not() {
        let c = [t("B", "r", "A")];
        let r = [t("A", "r", "B")];
        assert_eq!(
            score_document(&c, &r, MatchCriterion::Exact).weighted_correct,
            3.0
        );
        assert_eq!(
            score_document(&c, &r, MatchCriterion::Strict).weighted_correct,
            1.0
        );
    }

    #[test]
    fn aggregation_examples() {
        let (m, w) = aggregate(&[
            DocumentScore {
                weighted_correct: 3.0,
                candidate_elements: 3,
                reference_elements: 3,
            },
            DocumentScore {
                weighted_correct: 0.0,
                candidate_elements: 0,
                reference_elements: 3,
            },
        ]);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(w.is_empty());
        let (m, w) = aggregate(&[DocumentScore {
            weighted_correct: 0.0,
            candidate_elements: 0,
            reference_elements: 3,
        }]);
        assert_eq!(m.precision, 0.0);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn empty_sides() {
        let r = [t("A", "r", "B")];
        let d = score_document_detailed(&[], &r, MatchCriterion::Partial);
        assert_eq!(d.score.weighted_correct, 0.0);
        assert_eq!(d.judgments[&ElementJudgment::Missed], 3);
        let d = score_document_detailed(&r, &[], MatchCriterion::Partial);
        assert_eq!(d.judgments[&ElementJudgment::Spurious], 3);
    }

    #[test]
    fn assignment_beats_greedy() {
        // Greedy would pair c0 with r0 (weight 3) and leave c1 with r1 (0);
        // the optimum pairs crosswise for 2 + 2.
        let w = vec![vec![3.0, 2.0], vec![2.0, 0.0]];
        let a = max_assignment(&w);
        assert_eq!(a, vec![Some(1), Some(0)]);
        let a = max_assignment(&[vec![1.0], vec![5.0], vec![2.0]]);
        assert_eq!(a, vec![None, Some(0), None]);
    }

    #[test]
    fn redundancy_examples() {
        let v = |x: &[f64]| EmbeddingVector::normalized(x.to_vec()).unwrap();
        let mut idx = VectorIndex::new(IndexMode::DefinitionSimilarity);
        idx.insert("a", v(&[1.0, 0.0])).unwrap();
        assert_eq!(redundancy_score(&idx), 0.0);
        idx.insert("b", v(&[0.0, 1.0])).unwrap();
        assert!(redundancy_score(&idx).abs() < 1e-12);
        let mut same = VectorIndex::new(IndexMode::DefinitionSimilarity);
        same.insert("a", v(&[1.0, 1.0])).unwrap();
        same.insert("b", v(&[1.0, 1.0])).unwrap();
        assert!((redundancy_score(&same) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stats_average() {
        let rec = |id: &str, it: usize, n: usize| {
            let mut r = ExtractionRecord::empty(id, it);
            r.canonical_triplets = (0..n).map(|i| t("s", "r", &i.to_string())).collect();
            r
        };
        let records = vec![rec("a", 0, 9), rec("b", 0, 5), rec("a", 1, 3)];
        let finals = final_records(&records);
        assert_eq!(schema_stats(200, &finals).avg_triplets_per_sentence, 4.0);
        assert_eq!(schema_stats(200, &finals).schema_size, 200);
        assert_eq!(schema_stats(0, &[]).avg_triplets_per_sentence, 0.0);
    }
}
