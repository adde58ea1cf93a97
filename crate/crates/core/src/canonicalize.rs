//! Rewriting open relations onto a schema: similarity search over relation
//! definitions proposes candidates, and a multiple-choice question to the
//! LLM picks one of them or none.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::embedding::retrieval::{build_index_from_pairs, relation_text};
use crate::embedding::{Embedder, IndexMode, VectorIndex};
use crate::error::{Error, Result};
use crate::gateway::parse::{parse_mcq_answer, McqChoice};
use crate::gateway::Gateway;
use crate::model::{
    CanonicalizationAction, RelationDefinition, Schema, Triplet, Warning, WarningKind,
};
use crate::prompts::{self, McqOption, MCQ_REMINDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanonMode {
    #[serde(alias = "target")]
    TargetAlignment,
    #[serde(alias = "self")]
    SelfCanonicalization,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanonConfig {
    pub candidate_k: usize,
    pub mode: CanonMode,
    /// Skip the MCQ when the open relation already names a schema relation.
    pub exact_match_shortcut: bool,
}

impl Default for CanonConfig {
    fn default() -> Self {
        CanonConfig {
            candidate_k: 5,
            mode: CanonMode::TargetAlignment,
            exact_match_shortcut: true,
        }
    }
}

impl CanonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_k == 0 {
            return Err(Error::Config("candidate_k must be at least 1".into()));
        }
        if self.candidate_k > 25 {
            return Err(Error::Config("candidate_k must be at most 25".into()));
        }
        Ok(())
    }
}

/// A schema together with its definition-similarity index. The two are only
/// ever changed together, so the index keys always equal the schema names.
#[derive(Debug, Clone)]
pub struct CanonicalSchemaState {
    schema: Schema,
    index: VectorIndex,
}

impl CanonicalSchemaState {
    pub fn empty() -> Self {
        CanonicalSchemaState {
            schema: Schema::new(),
            index: VectorIndex::new(IndexMode::DefinitionSimilarity),
        }
    }

    /// Embeds every relation of `schema` as `name: definition`.
    pub fn build(schema: Schema, embedder: &Embedder) -> Result<Self> {
        let index = build_index_from_pairs(
            schema
                .iter()
                .map(|d| (d.name.as_str(), Some(d.definition.as_str()))),
            embedder,
            IndexMode::DefinitionSimilarity,
        )?;
        Ok(CanonicalSchemaState { schema, index })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn into_schema(self) -> Schema {
        self.schema
    }

    pub fn add(&mut self, relation: RelationDefinition, embedder: &Embedder) -> Result<()> {
        if self.schema.contains(&relation.name) {
            return Err(Error::DuplicateKey(relation.name));
        }
        let vector = embedder.embed_one(&relation.embedding_text())?;
        self.index.insert(relation.name.clone(), vector)?;
        self.schema.insert(relation)
    }
}

pub fn build_target_index(target: &Schema, embedder: &Embedder) -> Result<CanonicalSchemaState> {
    if target.is_empty() {
        return Err(Error::InvalidSchema(
            "target alignment needs a non-empty target schema".into(),
        ));
    }
    CanonicalSchemaState::build(target.clone(), embedder)
}

/// Services canonicalization calls out to.
#[derive(Clone, Copy)]
pub struct CanonServices<'a> {
    pub gateway: &'a Gateway,
    pub embedder: &'a Embedder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Decision {
    Align(String),
    NoMatch,
}

fn ask_mcq(
    services: CanonServices<'_>,
    prompt: &str,
    num_candidates: usize,
    warnings: &mut Vec<Warning>,
) -> Result<McqChoice> {
    let first = services.gateway.ask(prompt)?;
    match parse_mcq_answer(&first.text, num_candidates) {
        Ok(choice) => return Ok(choice),
        Err(Error::AmbiguousMcq(_)) => {}
        Err(e) => return Err(e),
    }
    let second = services
        .gateway
        .ask(&prompts::with_reminder(prompt, MCQ_REMINDER))?;
    match parse_mcq_answer(&second.text, num_candidates) {
        Ok(choice) => Ok(choice),
        Err(Error::AmbiguousMcq(reply)) => {
            warnings.push(Warning::new(
                WarningKind::McqAmbiguous,
                format!("treated as none of the above: {reply:?}"),
            ));
            Ok(McqChoice::NoneOfTheAbove)
        }
        Err(e) => Err(e),
    }
}

fn decide(
    triplet: &Triplet,
    definition: &str,
    state: &CanonicalSchemaState,
    cfg: &CanonConfig,
    text: &str,
    services: CanonServices<'_>,
    warnings: &mut Vec<Warning>,
) -> Result<Decision> {
    let name = triplet.relation();
    if cfg.exact_match_shortcut && state.schema.contains(name) {
        return Ok(Decision::Align(name.to_string()));
    }
    if state.schema.is_empty() {
        return Ok(Decision::NoMatch);
    }
    let query = services
        .embedder
        .embed_one(&relation_text(name, Some(definition)))?;
    let hits = state.index.top_k(&query, cfg.candidate_k)?;
    let options: Vec<McqOption> = hits
        .iter()
        .map(|h| McqOption {
            name: h.key.clone(),
            definition: state
                .schema
                .definition(&h.key)
                .unwrap_or_default()
                .to_string(),
        })
        .collect();
    let prompt = prompts::canonicalize(text, triplet, definition, &options);
    Ok(match ask_mcq(services, &prompt, options.len(), warnings)? {
        McqChoice::Candidate(i) => Decision::Align(options[i].name.clone()),
        McqChoice::NoneOfTheAbove => Decision::NoMatch,
    })
}

/// Result of canonicalizing one triplet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canonicalized {
    pub triplet: Option<Triplet>,
    pub action: CanonicalizationAction,
    pub warnings: Vec<Warning>,
}

fn aligned(triplet: &Triplet, target: String, warnings: Vec<Warning>) -> Result<Canonicalized> {
    Ok(Canonicalized {
        triplet: Some(triplet.with_relation(&target)?),
        action: CanonicalizationAction::Aligned {
            source_relation: triplet.relation().to_string(),
            target_relation: target,
        },
        warnings,
    })
}

/// Target alignment of one triplet; `state` is never changed.
pub fn align_triplet(
    triplet: &Triplet,
    definition: &str,
    state: &CanonicalSchemaState,
    cfg: &CanonConfig,
    text: &str,
    services: CanonServices<'_>,
) -> Result<Canonicalized> {
    let mut warnings = Vec::new();
    match decide(
        triplet,
        definition,
        state,
        cfg,
        text,
        services,
        &mut warnings,
    )? {
        Decision::Align(target) => aligned(triplet, target, warnings),
        Decision::NoMatch => Ok(Canonicalized {
            triplet: None,
            action: CanonicalizationAction::Dropped {
                source_relation: triplet.relation().to_string(),
            },
            warnings,
        }),
    }
}

pub fn canonicalize_triplet(
    triplet: &Triplet,
    definition: &str,
    state: &mut CanonicalSchemaState,
    cfg: &CanonConfig,
    text: &str,
    services: CanonServices<'_>,
) -> Result<Canonicalized> {
    if cfg.mode == CanonMode::TargetAlignment {
        return align_triplet(triplet, definition, state, cfg, text, services);
    }
    let mut warnings = Vec::new();
    match decide(
        triplet,
        definition,
        state,
        cfg,
        text,
        services,
        &mut warnings,
    )? {
        Decision::Align(target) => aligned(triplet, target, warnings),
        // Only reachable with the shortcut off: the model rejected every
        // candidate, yet the name is already in the schema.
        Decision::NoMatch if state.schema.contains(triplet.relation()) => {
            aligned(triplet, triplet.relation().to_string(), warnings)
        }
        Decision::NoMatch => {
            let name = triplet.relation().to_string();
            state.add(
                RelationDefinition::new(&name, definition)?,
                services.embedder,
            )?;
            Ok(Canonicalized {
                triplet: Some(triplet.clone()),
                action: CanonicalizationAction::Added {
                    source_relation: name,
                },
                warnings,
            })
        }
    }
}

/// Canonical triplets, the action taken for every input triplet, and the
/// warnings raised, for one document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DocumentCanon {
    pub triplets: Vec<Triplet>,
    pub actions: Vec<CanonicalizationAction>,
    pub warnings: Vec<Warning>,
}

impl DocumentCanon {
    fn push(&mut self, c: Canonicalized) {
        self.triplets.extend(c.triplet);
        self.actions.push(c.action);
        self.warnings.extend(c.warnings);
    }
}

fn definition_for<'a>(
    triplet: &Triplet,
    definitions: &'a IndexMap<String, String>,
) -> Result<&'a str> {
    definitions
        .get(triplet.relation())
        .map(String::as_str)
        .ok_or_else(|| {
            Error::Precondition(format!(
                "no definition for relation '{}'",
                triplet.relation()
            ))
        })
}

/// Target alignment of a document against a fixed schema.
pub fn align_document(
    triplets: &[Triplet],
    definitions: &IndexMap<String, String>,
    state: &CanonicalSchemaState,
    cfg: &CanonConfig,
    text: &str,
    services: CanonServices<'_>,
) -> Result<DocumentCanon> {
    let mut out = DocumentCanon::default();
    for t in triplets {
        out.push(align_triplet(
            t,
            definition_for(t, definitions)?,
            state,
            cfg,
            text,
            services,
        )?);
    }
    Ok(out)
}

/// Processes `triplets` strictly in order; in self mode relations added for
/// an earlier triplet are candidates for later ones.
pub fn canonicalize_document(
    triplets: &[Triplet],
    definitions: &IndexMap<String, String>,
    state: &mut CanonicalSchemaState,
    cfg: &CanonConfig,
    text: &str,
    services: CanonServices<'_>,
) -> Result<DocumentCanon> {
    let mut out = DocumentCanon::default();
    for t in triplets {
        out.push(canonicalize_triplet(
            t,
            definition_for(t, definitions)?,
            state,
            cfg,
            text,
            services,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backend::RetryPolicy;
    use crate::embedding::HashingEmbedder;
    use crate::gateway::{GatewayConfig, ScriptedChat};

    fn t(s: &str, r: &str, o: &str) -> Triplet {
        Triplet::new(s, r, o).unwrap()
    }

    fn gateway(f: impl Fn(&str) -> String + Send + Sync + 'static) -> Gateway {
        Gateway::new(
            Arc::new(ScriptedChat::new("test", move |p| Ok(f(p)))),
            GatewayConfig::default(),
        )
        .with_retry(RetryPolicy::none())
    }

    fn embedder() -> Embedder {
        Embedder::new(HashingEmbedder::new(128), 2)
    }

    fn schema(pairs: &[(&str, &str)]) -> Schema {
        Schema::from_definitions(
            pairs
                .iter()
                .map(|(n, d)| RelationDefinition::new(n, d).unwrap()),
        )
        .unwrap()
    }

    fn defs(pairs: &[(&str, &str)]) -> IndexMap<String, String> {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn target_requires_schema() {
        assert!(build_target_index(&Schema::new(), &embedder()).is_err());
        let s = build_target_index(&schema(&[("r", "R.")]), &embedder()).unwrap();
        assert_eq!(s.index().len(), 1);
    }

    #[test]
    fn mcq_choice_renames_relation() {
        let e = embedder();
        let state = build_target_index(
            &schema(&[
                ("mission", "The subject entity participated in the event or operation specified by the object entity."),
                ("season", "The subject entity participated in the season of a series specified by the object entity."),
            ]),
            &e,
        )
        .unwrap();
        let gw = gateway(|p| {
            let a = p.find("A. 'mission'").is_some();
            if a {
                "A".into()
            } else {
                "B".into()
            }
        });
        let services = CanonServices {
            gateway: &gw,
            embedder: &e,
        };
        let out = align_triplet(
            &t("Alan Shepard", "participatedIn", "Apollo 14"),
            "The subject entity took part in the event or mission specified by the object entity.",
            &state,
            &CanonConfig::default(),
            "Alan Shepard was a member of the Apollo 14 crew.",
            services,
        )
        .unwrap();
        assert_eq!(out.triplet, Some(t("Alan Shepard", "mission", "Apollo 14")));
    }

    #[test]
    fn none_of_the_above_drops_in_target_mode() {
        let e = embedder();
        let state = build_target_index(&schema(&[("a", "A."), ("b", "B.")]), &e).unwrap();
        let gw = gateway(|_| "C".into());
        let out = align_document(
            &[t("x", "weird", "y")],
            &defs(&[("weird", "Weird.")]),
            &state,
            &CanonConfig::default(),
            "x weird y",
            CanonServices {
                gateway: &gw,
                embedder: &e,
            },
        )
        .unwrap();
        assert!(out.triplets.is_empty());
        assert!(out.actions[0].is_dropped());
    }

    #[test]
    fn ambiguous_twice_means_none() {
        let e = embedder();
        let state = build_target_index(&schema(&[("a", "A."), ("b", "B.")]), &e).unwrap();
        let gw = gateway(|_| "maybe A or B".into());
        let out = align_triplet(
            &t("x", "r", "y"),
            "R.",
            &state,
            &CanonConfig::default(),
            "x r y",
            CanonServices {
                gateway: &gw,
                embedder: &e,
            },
        )
        .unwrap();
        assert!(out.action.is_dropped());
        assert_eq!(out.warnings[0].kind, WarningKind::McqAmbiguous);
        assert_eq!(gw.stats().requests, 2);
    }

    #[test]
    fn self_mode_merges_synonyms() {
        let e = embedder();
        let mut state = CanonicalSchemaState::empty();
        let gw = gateway(|p| {
            assert!(p.contains("A. 'bornOn'"));
            "A".into()
        });
        let cfg = CanonConfig {
            mode: CanonMode::SelfCanonicalization,
            ..CanonConfig::default()
        };
        let out = canonicalize_document(
            &[t("A", "bornOn", "1900"), t("B", "birthOn", "1901")],
            &defs(&[
                ("bornOn", "Born on a date."),
                ("birthOn", "Birth on a date."),
            ]),
            &mut state,
            &cfg,
            "text",
            CanonServices {
                gateway: &gw,
                embedder: &e,
            },
        )
        .unwrap();
        assert_eq!(state.schema().len(), 1);
        assert_eq!(
            out.triplets,
            vec![t("A", "bornOn", "1900"), t("B", "bornOn", "1901")]
        );
        assert!(matches!(
            out.actions[0],
            CanonicalizationAction::Added { .. }
        ));
        assert_eq!(gw.stats().requests, 1);
        assert_eq!(
            state.index().keys().collect::<Vec<_>>(),
            state.schema().names().collect::<Vec<_>>()
        );
    }

    #[test]
    fn exact_names_need_no_llm() {
        let e = embedder();
        let state = build_target_index(&schema(&[("a", "A."), ("b", "B.")]), &e).unwrap();
        let gw = gateway(|_| panic!("unexpected call"));
        let out = align_document(
            &[t("x", "a", "y"), t("x", "b", "z")],
            &defs(&[("a", "A."), ("b", "B.")]),
            &state,
            &CanonConfig::default(),
            "",
            CanonServices {
                gateway: &gw,
                embedder: &e,
            },
        )
        .unwrap();
        assert_eq!(out.triplets.len(), 2);
        assert!(out.actions.iter().all(|a| a.target_relation().is_some()));
    }
}
