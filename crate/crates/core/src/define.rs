//! One-sentence definitions for the relations of a document's triplets.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::gateway::parse::parse_definitions;
use crate::gateway::Gateway;
use crate::model::{dedupe_strings, Triplet, Warning, WarningKind};
use crate::oie::Outcome;
use crate::prompts::{self, FewShotRecord};

pub fn fallback_definition(relation: &str) -> String {
    format!("The subject entity has the relation '{relation}' to the object entity.")
}

/// Definitions keyed by relation, in first-appearance order, plus the
/// relations that had to use [`fallback_definition`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Definitions {
    pub definitions: IndexMap<String, String>,
    pub fallbacks: Vec<String>,
}

fn ask(
    gateway: &Gateway,
    prompt: &str,
    expected: &[String],
    found: &mut IndexMap<String, String>,
    warnings: &mut Vec<Warning>,
) -> Result<()> {
    let reply = gateway.ask(prompt)?;
    if reply.truncated {
        warnings.push(Warning::new(
            WarningKind::Truncated,
            "reply hit the token limit",
        ));
    }
    let parsed = parse_definitions(&reply.text, expected);
    warnings.extend(
        parsed
            .warnings
            .into_iter()
            .map(|w| Warning::new(WarningKind::Parse, w)),
    );
    for (name, def) in parsed.value.definitions {
        found.entry(name).or_insert(def);
    }
    Ok(())
}

/// Defines every distinct relation of `triplets`. Relations the reply leaves
/// out are asked for once more; whatever is still missing gets a fallback.
pub fn define_relations(
    text: &str,
    triplets: &[Triplet],
    examples: &[FewShotRecord],
    gateway: &Gateway,
) -> Result<Outcome<Definitions>> {
    complete_definitions(text, triplets, IndexMap::new(), examples, gateway)
}

/// As [`define_relations`], starting from definitions already known (as in
/// combined extraction); only relations without one are requested.
pub fn complete_definitions(
    text: &str,
    triplets: &[Triplet],
    known: IndexMap<String, String>,
    examples: &[FewShotRecord],
    gateway: &Gateway,
) -> Result<Outcome<Definitions>> {
    if triplets.is_empty() {
        return Err(Error::Precondition("no triplets to define".into()));
    }
    let relations = dedupe_strings(triplets.iter().map(Triplet::relation));
    let mut found = known;
    let mut warnings = Vec::new();
    for round in 0..2 {
        let missing: Vec<String> = relations
            .iter()
            .filter(|r| !found.contains_key(*r))
            .cloned()
            .collect();
        if missing.is_empty() {
            break;
        }
        let subset: Vec<Triplet> = triplets
            .iter()
            .filter(|t| missing.iter().any(|m| m == t.relation()))
            .cloned()
            .collect();
        let mut prompt = prompts::define(examples, text, &subset)?;
        if round > 0 {
            let names = missing.join(", ");
            prompt = prompts::with_reminder(
                &prompt,
                &format!("Write one line of the form 'relation: definition' for each of: {names}"),
            );
        }
        ask(gateway, &prompt, &missing, &mut found, &mut warnings)?;
    }
    let mut out = Definitions::default();
    for rel in relations {
        let def = match found.shift_remove(&rel) {
            Some(d) => d,
            None => {
                warnings.push(Warning::new(
                    WarningKind::DefinitionFallback,
                    format!("no definition produced for '{rel}'"),
                ));
                out.fallbacks.push(rel.clone());
                fallback_definition(&rel)
            }
        };
        out.definitions.insert(rel, def);
    }
    Ok(Outcome {
        value: out,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::backend::RetryPolicy;
    use crate::gateway::{GatewayConfig, ScriptedChat};

    fn t(s: &str, r: &str, o: &str) -> Triplet {
        Triplet::new(s, r, o).unwrap()
    }

    fn gateway(f: impl Fn(usize, &str) -> String + Send + Sync + 'static) -> Gateway {
        let calls = AtomicUsize::new(0);
        Gateway::new(
            Arc::new(ScriptedChat::new("test", move |p| {
                Ok(f(calls.fetch_add(1, Ordering::SeqCst), p))
            })),
            GatewayConfig::default(),
        )
        .with_retry(RetryPolicy::none())
    }

    fn triplets() -> Vec<Triplet> {
        vec![
            t("A", "bornOn", "B"),
            t("A", "participatedIn", "C"),
            t("D", "bornOn", "E"),
        ]
    }

    #[test]
    fn complete_reply() {
        let gw = gateway(|_, _| "bornOn: Born def.\nparticipatedIn: Part def.".into());
        let out = define_relations("x", &triplets(), &[], &gw).unwrap();
        assert_eq!(out.value.definitions.len(), 2);
        assert!(out.value.fallbacks.is_empty());
        assert_eq!(gw.stats().requests, 1);
    }

    #[test]
    fn retry_fills_gap() {
        let gw = gateway(|call, prompt| {
            if call == 0 {
                "bornOn: Born def.".into()
            } else {
                assert!(prompt.contains("participatedIn"));
                assert!(!prompt.contains("'bornOn'"));
                "participatedIn: Part def.".into()
            }
        });
        let out = define_relations("x", &triplets(), &[], &gw).unwrap();
        assert!(out.value.fallbacks.is_empty());
        assert_eq!(
            out.value.definitions.keys().collect::<Vec<_>>(),
            vec!["bornOn", "participatedIn"]
        );
    }

    #[test]
    fn fallback_after_retry() {
        let gw = gateway(|_, _| "bornOn: Born def.".into());
        let out = define_relations("x", &triplets(), &[], &gw).unwrap();
        assert_eq!(out.value.fallbacks, vec!["participatedIn"]);
        assert_eq!(
            out.value.definitions["participatedIn"],
            "The subject entity has the relation 'participatedIn' to the object entity."
        );
        assert!(out
            .warnings
            .iter()
            .any(|w| w.kind == WarningKind::DefinitionFallback));
        assert_eq!(gw.stats().requests, 2);
    }

    #[test]
    fn known_definitions_skip_the_call() {
        let gw = gateway(|_, _| panic!("no call expected"));
        let known = [("bornOn", "B."), ("participatedIn", "P.")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let out = complete_definitions("x", &triplets(), known, &[], &gw).unwrap();
        assert_eq!(out.value.definitions.len(), 2);
    }
}
