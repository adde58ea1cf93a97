//! Prompt builders for every LLM-backed step.
//!
//! Each builder renders a [`PromptTemplate`] from few-shot records; the
//! examples section is left out entirely when no record carries the fields a
//! step needs.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gateway::parse::{
    choice_letter, format_string_list, format_triplet, format_triplet_list,
};
use crate::gateway::template::{vars, FewShotExample, PromptTemplate};
use crate::model::{dedupe_strings, Triplet};

/// One record of a few-shot example file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplets: Option<Vec<Triplet>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definitions: Option<IndexMap<String, String>>,
}

impl FewShotRecord {
    /// Entities listed in the record, or else the subjects and objects of its
    /// triplets.
    pub fn entities_or_derived(&self) -> Option<Vec<String>> {
        if let Some(e) = &self.entities {
            return Some(e.clone());
        }
        self.triplets
            .as_ref()
            .map(|ts| dedupe_strings(ts.iter().flat_map(|t| [t.subject(), t.object()])))
    }
}

const OIE_TASK: &str =
    "Given a piece of text, extract relational triplets in the form of [Subject, Relation, Object] from it.";
const OIE_QUERY: &str = "Now please extract triplets from the following text:";
const ENTITY_TASK: &str = "Given a piece of text, extract a list of entities from it.";
const ENTITY_QUERY: &str = "Now please extract entities from the following text:";
const DEFINE_TASK: &str = "Given a piece of text and a list of relational triplets extracted from it, write a definition for each relation present.";
const DEFINE_QUERY: &str =
    "Now write a definition for each relation present in the triplets extracted from the following text:";
const CANON_TASK: &str = "Given a piece of text, a relational triplet extracted from it, and the definition of the relation in it, choose the most appropriate relation to replace it in this context if there is any.";
const HINT_RELATIONS: &str =
    "Here are some potential relations and their descriptions you may look out for during extraction: ";
const COMBINED_TASK: &str = "Given a piece of text, extract relational triplets in the form of [Subject, Relation, Object] from it, then write a definition for each relation present.";
const COMBINED_QUERY: &str =
    "Now please extract triplets from the following text and define each relation in them:";

pub const TRIPLETS_REMINDER: &str =
    "Answer with a list of triplets in the form [['Subject', 'Relation', 'Object'], ...] only.";
pub const ENTITIES_REMINDER: &str =
    "Answer with a list of entities in the form ['Entity', ...] only.";
pub const MCQ_REMINDER: &str = "Answer with a single letter only.";
pub const NONE_OF_THE_ABOVE: &str = "None of the above";

/// Marker that opens the definitions block in combined-mode replies.
pub const DEFINITIONS_HEADER: &str = "Definitions:";

fn template(
    task: &str,
    query: &str,
    layout: &str,
    examples: Vec<FewShotExample>,
    has_intro: bool,
) -> PromptTemplate {
    let body = if examples.is_empty() {
        format!("{task}\n\n{query}")
    } else if has_intro {
        format!("{task}\n\nHere are some examples:\n\n{{examples}}\n\n{query}")
    } else {
        format!("{task}\n\n{{examples}}\n\n{query}")
    };
    PromptTemplate::new(body).with_examples(layout, examples)
}

fn format_definitions(defs: &IndexMap<String, String>) -> String {
    defs.iter()
        .map(|(name, def)| format!("{name}: {def}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn example(text: &str, extra: &[(&str, String)], output: String) -> FewShotExample {
    let mut fields = vars([("text", text.to_string())]);
    for (k, v) in extra {
        fields.insert(k.to_string(), v.clone());
    }
    FewShotExample { fields, output }
}

pub fn oie(records: &[FewShotRecord], text: &str) -> Result<String> {
    let examples = records
        .iter()
        .filter_map(|r| {
            let ts = r.triplets.as_ref()?;
            Some(example(&r.text, &[], format_triplet_list(ts)))
        })
        .collect();
    template(
        OIE_TASK,
        &format!("{OIE_QUERY}\n{{text}}"),
        "Text: {text}\n\nTriplets: {output}",
        examples,
        true,
    )
    .render(&vars([("text", text.to_string())]))
}

pub fn entities(records: &[FewShotRecord], text: &str) -> Result<String> {
    let examples = records
        .iter()
        .filter_map(|r| {
            let es = r.entities_or_derived()?;
            Some(example(&r.text, &[], format_string_list(&es)))
        })
        .collect();
    template(
        ENTITY_TASK,
        &format!("{ENTITY_QUERY}\n{{text}}"),
        "Text: {text}\n\nEntities: {output}",
        examples,
        true,
    )
    .render(&vars([("text", text.to_string())]))
}

pub fn define(records: &[FewShotRecord], text: &str, triplets: &[Triplet]) -> Result<String> {
    let examples = records
        .iter()
        .filter_map(|r| {
            let ts = r.triplets.as_ref()?;
            let defs = r.definitions.as_ref().filter(|d| !d.is_empty())?;
            Some(example(
                &r.text,
                &[("triplets", format_triplet_list(ts))],
                format_definitions(defs),
            ))
        })
        .collect();
    template(
        DEFINE_TASK,
        &format!("{DEFINE_QUERY}\n\nText: {{text}}\n\nTriplets: {{triplets}}"),
        "Text: {text}\n\nTriplets: {triplets}\n\nDefinitions:\n{output}",
        examples,
        false,
    )
    .render(&vars([
        ("text", text.to_string()),
        ("triplets", format_triplet_list(triplets)),
    ]))
}

/// Candidate relations offered to the refined extraction, with definitions
/// where known.
pub fn hint_block(entities: &[String], relations: &[(String, Option<String>)]) -> String {
    let mut out = String::new();
    if !entities.is_empty() {
        out.push_str("\nEntities: ");
        out.push_str(&format_string_list(entities));
    }
    if !relations.is_empty() {
        let items: Vec<String> = relations
            .iter()
            .enumerate()
            .map(|(i, (name, def))| match def {
                Some(d) => format!("{}. {name}: {d}", i + 1),
                None => format!("{}. {name}", i + 1),
            })
            .collect();
        out.push_str("\n\n");
        out.push_str(HINT_RELATIONS);
        out.push('\n');
        out.push_str(&items.join("\n\n"));
    }
    out
}

pub fn refined_oie(
    records: &[FewShotRecord],
    text: &str,
    entities: &[String],
    relations: &[(String, Option<String>)],
) -> Result<String> {
    let examples = records
        .iter()
        .filter_map(|r| {
            let ts = r.triplets.as_ref()?;
            let es = r.entities_or_derived()?;
            Some(example(
                &r.text,
                &[("entities", format_string_list(&es))],
                format_triplet_list(ts),
            ))
        })
        .collect();
    template(
        OIE_TASK,
        &format!("{OIE_QUERY}\n{{text}}{{hint}}"),
        "Text: {text}\n\nEntities: {entities}\n\nTriplets: {output}",
        examples,
        true,
    )
    .render(&vars([
        ("text", text.to_string()),
        ("hint", hint_block(entities, relations)),
    ]))
}

pub fn combined(records: &[FewShotRecord], text: &str) -> Result<String> {
    let examples = records
        .iter()
        .filter_map(|r| {
            let ts = r.triplets.as_ref()?;
            let defs = r.definitions.as_ref().filter(|d| !d.is_empty())?;
            Some(example(
                &r.text,
                &[("definitions", format_definitions(defs))],
                format_triplet_list(ts),
            ))
        })
        .collect();
    template(
        COMBINED_TASK,
        &format!("{COMBINED_QUERY}\n{{text}}"),
        "Text: {text}\n\nTriplets: {output}\n\nDefinitions:\n{definitions}",
        examples,
        true,
    )
    .render(&vars([("text", text.to_string())]))
}

/// One MCQ option: a schema relation and its definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McqOption {
    pub name: String,
    pub definition: String,
}

pub fn canonicalize(
    text: &str,
    triplet: &Triplet,
    definition: &str,
    options: &[McqOption],
) -> String {
    let mut choices: Vec<String> = options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. '{}': {}", choice_letter(i), o.name, o.definition))
        .collect();
    choices.push(format!(
        "{}. {NONE_OF_THE_ABOVE}",
        choice_letter(options.len())
    ));
    format!(
        "{CANON_TASK}\n\nText: {text}\n\nTriplets: {}\n\nDefinition of '{}': {definition}\n\nChoices:\n\n{}",
        format_triplet(triplet),
        triplet.relation(),
        choices.join("\n\n")
    )
}

/// Appends a format reminder to a prompt for a single re-ask.
pub fn with_reminder(prompt: &str, reminder: &str) -> String {
    format!("{prompt}\n\n{reminder}")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHEPARD: &str = "Alan Shepard was born on Nov 18, 1923 and selected by NASA in 1959. He was a member of the Apollo 14 crew.";

    fn t(s: &str, r: &str, o: &str) -> Triplet {
        Triplet::new(s, r, o).unwrap()
    }

    fn records() -> Vec<FewShotRecord> {
        vec![FewShotRecord {
            text: "The ALCO RS-3 has a diesel-electric transmission.".into(),
            triplets: Some(vec![t(
                "ALCO RS-3",
                "powerType",
                "Diesel-electric transmission",
            )]),
            entities: None,
            definitions: Some(
                [(
                    "powerType".to_string(),
                    "The subject entity uses the power source given by the object entity."
                        .to_string(),
                )]
                .into_iter()
                .collect(),
            ),
        }]
    }

    #[test]
    fn oie_prompt_layout() {
        let p = oie(&records(), SHEPARD).unwrap();
        assert!(p.starts_with(OIE_TASK));
        assert!(p.contains("Here are some examples:\n\nExample 1:\n\nText: The ALCO RS-3"));
        assert!(
            p.contains("Triplets: [['ALCO RS-3', 'powerType', 'Diesel-electric transmission']]")
        );
        assert!(p.ends_with(&format!(
            "Now please extract triplets from the following text:\n{SHEPARD}"
        )));
    }

    #[test]
    fn define_prompt_mentions_task() {
        let p = define(
            &records(),
            SHEPARD,
            &[t("Alan Shepard", "bornOn", "Nov 18, 1923")],
        )
        .unwrap();
        assert!(p.contains("write a definition for each relation"));
        assert!(p.contains("Definitions:\npowerType: The subject entity"));
        assert!(p.ends_with("Triplets: [['Alan Shepard', 'bornOn', 'Nov 18, 1923']]"));
    }

    #[test]
    fn refined_prompt_with_and_without_hint() {
        let rels = vec![
            (
                "birthDate".to_string(),
                Some(
                    "The subject entity was born on the date specified by the object entity."
                        .to_string(),
                ),
            ),
            ("selectedByNasa".to_string(), None),
        ];
        let p = refined_oie(
            &records(),
            SHEPARD,
            &["Alan Shepard".into(), "1959".into()],
            &rels,
        )
        .unwrap();
        assert!(p.contains("Entities: ['ALCO RS-3', 'Diesel-electric transmission']\n\nTriplets:"));
        assert!(p.contains(&format!("{SHEPARD}\nEntities: ['Alan Shepard', '1959']\n\n{HINT_RELATIONS}\n1. birthDate: The subject")));
        assert!(p.ends_with("\n\n2. selectedByNasa"));
        let bare = refined_oie(&records(), SHEPARD, &[], &[]).unwrap();
        assert!(bare.ends_with(SHEPARD));
    }

    #[test]
    fn mcq_prompt_letters() {
        let opts = vec![
            McqOption {
                name: "mission".into(),
                definition: "Mission def.".into(),
            },
            McqOption {
                name: "season".into(),
                definition: "Season def.".into(),
            },
        ];
        let p = canonicalize(
            SHEPARD,
            &t("Alan Shepard", "participatedIn", "Apollo 14"),
            "Took part.",
            &opts,
        );
        assert!(p.contains("Definition of 'participatedIn': Took part.\n\nChoices:\n\nA. 'mission': Mission def.\n\nB. 'season': Season def.\n\nC. None of the above"));
    }

    #[test]
    fn examples_section_dropped_without_records() {
        let p = oie(&[], "x").unwrap();
        assert_eq!(p, format!("{OIE_TASK}\n\n{OIE_QUERY}\nx"));
    }
}
