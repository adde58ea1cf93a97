//! Pipeline orchestration: the base extract-define-canonicalize pass and
//! hint-driven refinement passes on top of it.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::canonicalize::{
    align_document, build_target_index, canonicalize_document, CanonConfig, CanonMode,
    CanonServices, CanonicalSchemaState, DocumentCanon,
};
use crate::define::complete_definitions;
use crate::embedding::{
    build_relation_index, retrieve_relations, Embedder, IndexMode, RetrievalInstruction,
    VectorIndex,
};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::model::{Document, ExtractionRecord, Schema, Triplet, Warning, WarningKind};
use crate::oie::{
    extract_entities, extract_refined, extract_triplets, extract_with_definitions, OieConfig,
    Outcome,
};
use crate::par::{self, Execution};

pub use crate::oie::Hint;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Refinement passes after the base pass.
    pub iterations: usize,
    pub retrieval_k: usize,
    pub canon: CanonConfig,
    pub oie: OieConfig,
    pub instruction: RetrievalInstruction,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            iterations: 1,
            retrieval_k: 10,
            canon: CanonConfig::default(),
            oie: OieConfig::default(),
            instruction: RetrievalInstruction::default(),
            execution: Execution::default(),
        }
    }
}

impl PipelineConfig {
    pub fn mode(&self) -> CanonMode {
        self.canon.mode
    }

    pub fn validate(&self) -> Result<()> {
        self.canon.validate()?;
        self.oie.validate()?;
        if self.retrieval_k == 0 {
            return Err(Error::Config("retrieval_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// The chat model, the embedder used for definition similarity, and the
/// schema retriever.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub gateway: &'a Gateway,
    pub embedder: &'a Embedder,
    pub retriever: &'a Embedder,
}

impl<'a> Backends<'a> {
    fn canon(&self) -> CanonServices<'a> {
        CanonServices {
            gateway: self.gateway,
            embedder: self.embedder,
        }
    }
}

/// Schema relations relevant to a text, as seen by the retriever.
pub struct RetrievalContext<'a> {
    pub schema: &'a Schema,
    pub index: std::result::Result<&'a VectorIndex, &'a str>,
    pub retriever: &'a Embedder,
    pub instruction: &'a RetrievalInstruction,
    pub k: usize,
}

/// Candidate entities: those of `prev`'s canonical triplets, then the ones
/// the LLM lists. Candidate relations: `prev`'s canonical relations, then
/// the retrieved ones, each with its schema definition when there is one.
pub fn build_hint(
    prev: &ExtractionRecord,
    text: &str,
    ctx: &RetrievalContext<'_>,
    oie: &OieConfig,
    gateway: &Gateway,
) -> Result<Outcome<Hint>> {
    let mut warnings = Vec::new();
    let mut entities: Vec<String> = prev
        .canonical_triplets
        .iter()
        .flat_map(|t| [t.subject().to_string(), t.object().to_string()])
        .collect();
    match extract_entities(text, oie, gateway) {
        Ok(out) => {
            entities.extend(out.value);
            warnings.extend(out.warnings);
        }
        Err(e) if e.is_fatal() => return Err(e),
        Err(e) => warnings.push(Warning::new(
            WarningKind::Parse,
            format!("entity extraction failed: {e}"),
        )),
    }
    let mut relations: Vec<String> = prev
        .canonical_triplets
        .iter()
        .map(|t| t.relation().to_string())
        .collect();
    match ctx.index {
        Ok(index) if index.is_empty() => {}
        Ok(index) => match retrieve_relations(ctx.retriever, ctx.instruction, text, index, ctx.k) {
            Ok(hits) => relations.extend(hits.into_iter().map(|h| h.key)),
            Err(e) if e.is_fatal() => return Err(e),
            Err(e) => warnings.push(Warning::new(WarningKind::Retrieval, e.to_string())),
        },
        Err(reason) => warnings.push(Warning::new(WarningKind::Retrieval, reason)),
    }
    let with_defs = relations.into_iter().map(|name| {
        let def = ctx.schema.definition(&name).map(str::to_string);
        (name, def)
    });
    Ok(Outcome {
        value: Hint::new(entities, with_defs),
        warnings,
    })
}

/// Records of every pass (ordered by iteration, then document) and the
/// schema governing the final pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<ExtractionRecord>,
    pub schema: Schema,
}

impl RunOutput {
    pub fn final_iteration(&self) -> impl Iterator<Item = &ExtractionRecord> {
        let last = self.records.iter().map(|r| r.iteration).max().unwrap_or(0);
        self.records.iter().filter(move |r| r.iteration == last)
    }
}

struct Extracted {
    oie: Vec<Triplet>,
    definitions: IndexMap<String, String>,
    warnings: Vec<Warning>,
}

fn define_step(
    text: &str,
    triplets: Vec<Triplet>,
    known: IndexMap<String, String>,
    cfg: &PipelineConfig,
    gateway: &Gateway,
    mut warnings: Vec<Warning>,
) -> Result<Extracted> {
    let definitions = if triplets.is_empty() {
        IndexMap::new()
    } else {
        let out = complete_definitions(text, &triplets, known, cfg.oie.examples(), gateway)?;
        warnings.extend(out.warnings);
        out.value.definitions
    };
    Ok(Extracted {
        oie: triplets,
        definitions,
        warnings,
    })
}

fn base_extract(doc: &Document, cfg: &PipelineConfig, gateway: &Gateway) -> Result<Extracted> {
    if cfg.oie.combined_mode {
        let out = extract_with_definitions(&doc.text, &cfg.oie, gateway)?;
        let c = out.value;
        define_step(
            &doc.text,
            c.triplets,
            c.definitions,
            cfg,
            gateway,
            out.warnings,
        )
    } else {
        let out = extract_triplets(&doc.text, &cfg.oie, gateway)?;
        define_step(
            &doc.text,
            out.value,
            IndexMap::new(),
            cfg,
            gateway,
            out.warnings,
        )
    }
}

fn refined_extract(
    doc: &Document,
    prev: &ExtractionRecord,
    ctx: &RetrievalContext<'_>,
    cfg: &PipelineConfig,
    gateway: &Gateway,
) -> Result<Extracted> {
    let hint = build_hint(prev, &doc.text, ctx, &cfg.oie, gateway)?;
    let mut warnings = hint.warnings;
    let out = extract_refined(&doc.text, &hint.value, &cfg.oie, gateway)?;
    warnings.extend(out.warnings);
    define_step(
        &doc.text,
        out.value,
        IndexMap::new(),
        cfg,
        gateway,
        warnings,
    )
}

fn record(
    doc: &Document,
    iteration: usize,
    ex: Extracted,
    canon: DocumentCanon,
) -> ExtractionRecord {
    let mut warnings = ex.warnings;
    warnings.extend(canon.warnings);
    ExtractionRecord {
        document_id: doc.id.clone(),
        iteration,
        oie_triplets: ex.oie,
        definitions: ex.definitions,
        canonical_triplets: canon.triplets,
        actions: canon.actions,
        warnings,
        error: None,
    }
}

/// A document whose pass failed keeps its last successful output.
fn failed(
    doc: &Document,
    iteration: usize,
    prev: Option<&ExtractionRecord>,
    err: &Error,
) -> ExtractionRecord {
    log::warn!("document {} failed in iteration {iteration}: {err}", doc.id);
    let mut rec = match prev {
        Some(p) => ExtractionRecord {
            iteration,
            error: None,
            ..p.clone()
        },
        None => ExtractionRecord::empty(&doc.id, iteration),
    };
    rec.warnings
        .push(Warning::new(WarningKind::DocumentFailure, err.to_string()));
    rec.error = Some(err.to_string());
    rec
}

fn check_unique_ids(docs: &[Document]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for d in docs {
        if !seen.insert(d.id.as_str()) {
            return Err(Error::Precondition(format!(
                "duplicate document id {:?}",
                d.id
            )));
        }
    }
    Ok(())
}

fn initial_state(
    initial: Option<&Schema>,
    cfg: &PipelineConfig,
    embedder: &Embedder,
) -> Result<CanonicalSchemaState> {
    match cfg.mode() {
        CanonMode::TargetAlignment => {
            let target = initial.ok_or_else(|| {
                Error::Precondition("target alignment requires a target schema".into())
            })?;
            build_target_index(target, embedder)
        }
        CanonMode::SelfCanonicalization => match initial {
            Some(s) if !s.is_empty() => CanonicalSchemaState::build(s.clone(), embedder),
            _ => Ok(CanonicalSchemaState::empty()),
        },
    }
}

/// Canonicalizes every successfully extracted document. Target alignment
/// runs documents in parallel; self canonicalization runs them in order
/// against the shared, growing schema.
fn canonicalize_pass(
    docs: &[Document],
    iteration: usize,
    extracted: Vec<Result<Extracted>>,
    prev: Option<&[ExtractionRecord]>,
    state: &mut CanonicalSchemaState,
    cfg: &PipelineConfig,
    backends: Backends<'_>,
) -> Result<Vec<ExtractionRecord>> {
    let prev_of = |i: usize| prev.map(|p| &p[i]);
    let finish = |i: usize,
                  ex: Result<Extracted>,
                  canon: Option<Result<DocumentCanon>>|
     -> Result<ExtractionRecord> {
        let outcome = ex.and_then(|ex| {
            canon
                .expect("canonicalized when extracted")
                .map(|c| (ex, c))
        });
        match outcome {
            Ok((ex, c)) => Ok(record(&docs[i], iteration, ex, c)),
            Err(e) if e.is_fatal() => Err(e),
            Err(e) => Ok(failed(&docs[i], iteration, prev_of(i), &e)),
        }
    };
    match cfg.mode() {
        CanonMode::TargetAlignment => {
            let shared: &CanonicalSchemaState = state;
            let canons = par::map_indexed(cfg.execution, docs.len(), |i| {
                extracted[i].as_ref().ok().map(|ex| {
                    align_document(
                        &ex.oie,
                        &ex.definitions,
                        shared,
                        &cfg.canon,
                        &docs[i].text,
                        backends.canon(),
                    )
                })
            });
            extracted
                .into_iter()
                .zip(canons)
                .enumerate()
                .map(|(i, (ex, canon))| finish(i, ex, canon))
                .collect()
        }
        CanonMode::SelfCanonicalization => {
            let mut out = Vec::with_capacity(docs.len());
            for (i, ex) in extracted.into_iter().enumerate() {
                let canon = ex.as_ref().ok().map(|ex| {
                    canonicalize_document(
                        &ex.oie,
                        &ex.definitions,
                        state,
                        &cfg.canon,
                        &docs[i].text,
                        backends.canon(),
                    )
                });
                out.push(finish(i, ex, canon)?);
            }
            Ok(out)
        }
    }
}

fn first_fatal<T>(results: Vec<Result<T>>) -> Result<Vec<Result<T>>> {
    if results.iter().any(|r| matches!(r, Err(e) if e.is_fatal())) {
        let e = results
            .into_iter()
            .find_map(|r| r.err().filter(Error::is_fatal))
            .expect("checked above");
        return Err(e);
    }
    Ok(results)
}

/// The base pass followed by `cfg.iterations` refinement passes.
///
/// `initial` is the target schema in target alignment and an optional seed
/// schema in self canonicalization.
pub fn run_edc_r(
    docs: &[Document],
    initial: Option<&Schema>,
    cfg: &PipelineConfig,
    backends: Backends<'_>,
) -> Result<RunOutput> {
    cfg.validate()?;
    check_unique_ids(docs)?;
    let mut state = initial_state(initial, cfg, backends.embedder)?;
    if docs.is_empty() {
        return Ok(RunOutput {
            records: Vec::new(),
            schema: state.into_schema(),
        });
    }
    let extracted = first_fatal(par::map(cfg.execution, docs, |d| {
        base_extract(d, cfg, backends.gateway)
    }))?;
    let mut current = canonicalize_pass(docs, 0, extracted, None, &mut state, cfg, backends)?;
    let mut records = current.clone();
    for iteration in 1..=cfg.iterations {
        // Hints read the schema as it stood after the previous full pass.
        let snapshot = state.schema().clone();
        let index =
            match build_relation_index(&snapshot, backends.retriever, IndexMode::TextRelevance) {
                Ok(i) => Ok(i),
                Err(e) if e.is_fatal() => return Err(e),
                Err(e) => Err(format!("schema retriever unavailable: {e}")),
            };
        let index_ref = index.as_ref().map_err(String::as_str);
        let ctx = RetrievalContext {
            schema: &snapshot,
            index: index_ref,
            retriever: backends.retriever,
            instruction: &cfg.instruction,
            k: cfg.retrieval_k,
        };
        let prev = &current;
        let extracted = first_fatal(par::map_indexed(cfg.execution, docs.len(), |i| {
            refined_extract(&docs[i], &prev[i], &ctx, cfg, backends.gateway)
        }))?;
        let next = canonicalize_pass(
            docs,
            iteration,
            extracted,
            Some(prev),
            &mut state,
            cfg,
            backends,
        )?;
        records.extend(next.iter().cloned());
        current = next;
    }
    Ok(RunOutput {
        records,
        schema: state.into_schema(),
    })
}

/// A single extract-define-canonicalize pass.
pub fn run_edc(
    docs: &[Document],
    initial: Option<&Schema>,
    cfg: &PipelineConfig,
    backends: Backends<'_>,
) -> Result<RunOutput> {
    let base = PipelineConfig {
        iterations: 0,
        ..cfg.clone()
    };
    run_edc_r(docs, initial, &base, backends)
}

/// Definition and canonicalization only, for documents whose reference
/// triplets hold already extracted open triplets.
pub fn run_define_canonicalize(
    docs: &[Document],
    initial: Option<&Schema>,
    cfg: &PipelineConfig,
    backends: Backends<'_>,
) -> Result<RunOutput> {
    cfg.canon.validate()?;
    check_unique_ids(docs)?;
    let mut state = initial_state(initial, cfg, backends.embedder)?;
    let extracted = first_fatal(par::map(cfg.execution, docs, |d| {
        let open =
            crate::model::dedupe_triplets(d.reference_triplets.as_deref().unwrap_or_default());
        define_step(
            &d.text,
            open,
            IndexMap::new(),
            cfg,
            backends.gateway,
            Vec::new(),
        )
    }))?;
    let records = canonicalize_pass(docs, 0, extracted, None, &mut state, cfg, backends)?;
    Ok(RunOutput {
        records,
        schema: state.into_schema(),
    })
}
