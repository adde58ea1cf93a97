//! Open extraction of triplets and entities from a single text.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::parse::{parse_definitions, parse_string_list, parse_triplet_list, Parsed};
use crate::gateway::template::DEFAULT_FEW_SHOT_COUNT;
use crate::gateway::Gateway;
use crate::model::{dedupe_strings, dedupe_triplets, Triplet, Warning, WarningKind};
use crate::prompts::{
    self, FewShotRecord, DEFINITIONS_HEADER, ENTITIES_REMINDER, TRIPLETS_REMINDER,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OieConfig {
    #[serde(skip)]
    pub few_shot: Vec<FewShotRecord>,
    pub combined_mode: bool,
    pub max_parse_retries: usize,
    pub num_examples: usize,
}

impl Default for OieConfig {
    fn default() -> Self {
        OieConfig {
            few_shot: Vec::new(),
            combined_mode: false,
            max_parse_retries: 1,
            num_examples: DEFAULT_FEW_SHOT_COUNT,
        }
    }
}

impl OieConfig {
    pub fn examples(&self) -> &[FewShotRecord] {
        &self.few_shot[..self.few_shot.len().min(self.num_examples)]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.few_shot.iter().any(|r| r.triplets.is_some()) {
            return Err(Error::Config(
                "few-shot file must contain at least one record with triplets".into(),
            ));
        }
        Ok(())
    }
}

/// A step's value plus the warnings it raised.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outcome<T> {
    pub value: T,
    pub warnings: Vec<Warning>,
}

fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::Precondition("document text is empty".into()));
    }
    Ok(())
}

/// Asks `prompt`, parsing the reply with `parse`. A reply that yields no
/// item while reporting parse problems is re-asked with `reminder` appended,
/// at most `retries` times.
fn ask_parsed<T: Default>(
    gateway: &Gateway,
    prompt: &str,
    reminder: &str,
    retries: usize,
    is_empty: impl Fn(&T) -> bool,
    parse: impl Fn(&str) -> Parsed<T>,
) -> Result<(Outcome<T>, String)> {
    let mut warnings = Vec::new();
    let mut current = prompt.to_string();
    for attempt in 0..=retries {
        let reply = gateway.ask(&current)?;
        if reply.truncated {
            warnings.push(Warning::new(
                WarningKind::Truncated,
                "reply hit the token limit",
            ));
        }
        let parsed = parse(&reply.text);
        let failed = is_empty(&parsed.value) && !parsed.warnings.is_empty();
        warnings.extend(
            parsed
                .warnings
                .into_iter()
                .map(|w| Warning::new(WarningKind::Parse, w)),
        );
        if !failed || attempt == retries {
            return Ok((
                Outcome {
                    value: parsed.value,
                    warnings,
                },
                reply.text,
            ));
        }
        current = prompts::with_reminder(prompt, reminder);
    }
    unreachable!("loop returns on the last attempt")
}

pub fn extract_triplets(
    text: &str,
    cfg: &OieConfig,
    gateway: &Gateway,
) -> Result<Outcome<Vec<Triplet>>> {
    require_text(text)?;
    let prompt = prompts::oie(cfg.examples(), text)?;
    let (mut out, _) = ask_parsed(
        gateway,
        &prompt,
        TRIPLETS_REMINDER,
        cfg.max_parse_retries,
        Vec::is_empty,
        parse_triplet_list,
    )?;
    out.value = dedupe_triplets(&out.value);
    Ok(out)
}

pub fn extract_entities(
    text: &str,
    cfg: &OieConfig,
    gateway: &Gateway,
) -> Result<Outcome<Vec<String>>> {
    require_text(text)?;
    let prompt = prompts::entities(cfg.examples(), text)?;
    let (mut out, _) = ask_parsed(
        gateway,
        &prompt,
        ENTITIES_REMINDER,
        cfg.max_parse_retries,
        Vec::is_empty,
        parse_string_list,
    )?;
    out.value = dedupe_strings(out.value.iter().map(|s| s.trim()));
    Ok(out)
}

/// Candidate entities and relations offered to a refined extraction.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Hint {
    pub candidate_entities: Vec<String>,
    pub candidate_relations: Vec<(String, Option<String>)>,
}

impl Hint {
    /// Builds a hint, keeping the first occurrence of every entity and
    /// relation and dropping blank entries. A later duplicate relation may
    /// still contribute a definition the first occurrence lacked.
    pub fn new(
        entities: impl IntoIterator<Item = String>,
        relations: impl IntoIterator<Item = (String, Option<String>)>,
    ) -> Self {
        let candidate_entities = dedupe_strings(entities.into_iter().map(|e| e.trim().to_string()));
        let mut merged: IndexMap<String, Option<String>> = IndexMap::new();
        for (name, def) in relations {
            let name = crate::model::normalize_relation(&name);
            if name.is_empty() {
                continue;
            }
            let def = def.filter(|d| !d.trim().is_empty());
            let slot = merged.entry(name).or_insert(None);
            if slot.is_none() {
                *slot = def;
            }
        }
        Hint {
            candidate_entities,
            candidate_relations: merged.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.candidate_entities.is_empty() && self.candidate_relations.is_empty()
    }
}

pub fn extract_refined(
    text: &str,
    hint: &Hint,
    cfg: &OieConfig,
    gateway: &Gateway,
) -> Result<Outcome<Vec<Triplet>>> {
    require_text(text)?;
    let prompt = prompts::refined_oie(
        cfg.examples(),
        text,
        &hint.candidate_entities,
        &hint.candidate_relations,
    )?;
    let (mut out, _) = ask_parsed(
        gateway,
        &prompt,
        TRIPLETS_REMINDER,
        cfg.max_parse_retries,
        Vec::is_empty,
        parse_triplet_list,
    )?;
    out.value = dedupe_triplets(&out.value);
    Ok(out)
}

/// Triplets and definitions from one combined prompt.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CombinedExtraction {
    pub triplets: Vec<Triplet>,
    pub definitions: IndexMap<String, String>,
    /// Some extracted relation was left undefined by the reply.
    pub needs_backfill: bool,
}

fn split_combined(reply: &str) -> (&str, Option<&str>) {
    match reply.find(DEFINITIONS_HEADER) {
        Some(at) => (&reply[..at], Some(&reply[at + DEFINITIONS_HEADER.len()..])),
        None => (reply, None),
    }
}

pub fn extract_with_definitions(
    text: &str,
    cfg: &OieConfig,
    gateway: &Gateway,
) -> Result<Outcome<CombinedExtraction>> {
    if !cfg.combined_mode {
        return Err(Error::Precondition(
            "combined extraction requires combined_mode".into(),
        ));
    }
    require_text(text)?;
    let prompt = prompts::combined(cfg.examples(), text)?;
    let (out, reply) = ask_parsed(
        gateway,
        &prompt,
        TRIPLETS_REMINDER,
        cfg.max_parse_retries,
        Vec::is_empty,
        |reply| parse_triplet_list(split_combined(reply).0),
    )?;
    let triplets = dedupe_triplets(&out.value);
    let relations = dedupe_strings(triplets.iter().map(Triplet::relation));
    let mut warnings = out.warnings;
    let mut definitions = IndexMap::new();
    let mut needs_backfill = !relations.is_empty();
    if let (Some(block), false) = (split_combined(&reply).1, relations.is_empty()) {
        let parsed = parse_definitions(block, &relations);
        warnings.extend(
            parsed
                .warnings
                .into_iter()
                .map(|w| Warning::new(WarningKind::Parse, w)),
        );
        needs_backfill = !parsed.value.missing.is_empty();
        definitions = parsed.value.definitions;
    }
    Ok(Outcome {
        value: CombinedExtraction {
            triplets,
            definitions,
            needs_backfill,
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backend::RetryPolicy;
    use crate::gateway::{GatewayConfig, ScriptedChat};

    fn gateway(f: impl Fn(&str) -> String + Send + Sync + 'static) -> Gateway {
        Gateway::new(
            Arc::new(ScriptedChat::new("test", move |p| Ok(f(p)))),
            GatewayConfig::default(),
        )
        .with_retry(RetryPolicy::none())
    }

    fn cfg() -> OieConfig {
        OieConfig {
            few_shot: vec![FewShotRecord {
                text: "A r B.".into(),
                triplets: Some(vec![Triplet::new("A", "r", "B").unwrap()]),
                entities: None,
                definitions: None,
            }],
            ..OieConfig::default()
        }
    }

    #[test]
    fn duplicates_are_removed() {
        let gw = gateway(|_| "[['A', 'r', 'B'], ['A', 'r', 'B'], ['A', 's', 'C']]".into());
        let out = extract_triplets("A r B; A s C.", &cfg(), &gw).unwrap();
        assert_eq!(out.value.len(), 2);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn empty_list_is_valid_without_retry() {
        let gw = gateway(|_| "[]".into());
        assert!(extract_triplets("Nothing here.", &cfg(), &gw)
            .unwrap()
            .value
            .is_empty());
        assert_eq!(gw.stats().requests, 1);
    }

    #[test]
    fn garbage_is_retried_once_then_warned() {
        let gw = gateway(|_| "I cannot help with that.".into());
        let out = extract_triplets("A r B.", &cfg(), &gw).unwrap();
        assert!(out.value.is_empty());
        assert_eq!(gw.stats().requests, 2);
        assert!(out.warnings.iter().all(|w| w.kind == WarningKind::Parse));
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn reminder_retry_recovers() {
        let gw = gateway(|p| {
            if p.ends_with(TRIPLETS_REMINDER) {
                "[['A', 'r', 'B']]".into()
            } else {
                "no idea".into()
            }
        });
        let out = extract_triplets("A r B.", &cfg(), &gw).unwrap();
        assert_eq!(out.value.len(), 1);
    }

    #[test]
    fn entities_deduplicated() {
        let gw = gateway(|_| "['NASA', 'Apollo 14', 'NASA']".into());
        let out = extract_entities("x", &cfg(), &gw).unwrap();
        assert_eq!(out.value, vec!["NASA", "Apollo 14"]);
    }

    #[test]
    fn hint_dedup_keeps_first_and_fills_definition() {
        let h = Hint::new(
            vec!["A".into(), "B".into(), "A".into(), " ".into()],
            vec![
                ("r".into(), None),
                ("s".into(), Some("S def.".into())),
                ("r".into(), Some("R def.".into())),
            ],
        );
        assert_eq!(h.candidate_entities, vec!["A", "B"]);
        assert_eq!(
            h.candidate_relations,
            vec![
                ("r".into(), Some("R def.".into())),
                ("s".into(), Some("S def.".into()))
            ]
        );
    }

    #[test]
    fn combined_mode_parses_both_blocks() {
        let mut c = cfg();
        c.combined_mode = true;
        let gw = gateway(|_| {
            "[['A', 'r', 'B']]\n\nDefinitions:\nr: The subject relates to the object.".into()
        });
        let out = extract_with_definitions("A r B.", &c, &gw).unwrap().value;
        assert_eq!(out.triplets.len(), 1);
        assert_eq!(out.definitions["r"], "The subject relates to the object.");
        assert!(!out.needs_backfill);

        let gw = gateway(|_| "[['A', 'r', 'B']]".into());
        let out = extract_with_definitions("A r B.", &c, &gw).unwrap().value;
        assert!(out.definitions.is_empty());
        assert!(out.needs_backfill);

        let gw = gateway(|_| "[]".into());
        let out = extract_with_definitions("A r B.", &c, &gw).unwrap().value;
        assert!(out.triplets.is_empty() && out.definitions.is_empty() && !out.needs_backfill);
    }
}
