//! Domain types shared by every pipeline phase.
//!
//! All values here are plain data: once constructed they are never mutated
//! behind shared references, so they can be freely sent between workers.

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Characters that never appear inside a single relation phrase.
const RELATION_FORBIDDEN: &[char] = &['[', ']', '{', '}', ','];

/// Trims and collapses internal whitespace runs to a single space. Case is kept.
pub fn normalize_relation(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One `(subject, relation, object)` fact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    subject: String,
    relation: String,
    object: String,
}

impl Triplet {
    /// Builds a triplet, trimming subject/object and normalizing the relation.
    pub fn new(
        subject: impl AsRef<str>,
        relation: impl AsRef<str>,
        object: impl AsRef<str>,
    ) -> Result<Self> {
        let subject = subject.as_ref().trim().to_string();
        let relation = normalize_relation(relation.as_ref());
        let object = object.as_ref().trim().to_string();
        if subject.is_empty() || relation.is_empty() || object.is_empty() {
            return Err(Error::InvalidTriplet(format!(
                "empty element in [{subject:?}, {relation:?}, {object:?}]"
            )));
        }
        if relation.contains(RELATION_FORBIDDEN) {
            return Err(Error::InvalidTriplet(format!(
                "relation {relation:?} contains a list delimiter"
            )));
        }
        Ok(Triplet {
            subject,
            relation,
            object,
        })
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn relation(&self) -> &str {
        &self.relation
    }

    pub fn object(&self) -> &str {
        &self.object
    }

    pub fn elements(&self) -> [&str; 3] {
        [&self.subject, &self.relation, &self.object]
    }

    /// Same subject and object under a different relation name.
    pub fn with_relation(&self, relation: &str) -> Result<Self> {
        Triplet::new(&self.subject, relation, &self.object)
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}]", self.subject, self.relation, self.object)
    }
}

impl Serialize for Triplet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [&self.subject, &self.relation, &self.object].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Triplet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let parts = Vec::<String>::deserialize(deserializer)?;
        if parts.len() != 3 {
            return Err(D::Error::custom(format!(
                "triplet must have 3 elements, found {}",
                parts.len()
            )));
        }
        Triplet::new(&parts[0], &parts[1], &parts[2]).map_err(D::Error::custom)
    }
}

/// Removes repeated triplets, keeping the first occurrence.
pub fn dedupe_triplets(triplets: &[Triplet]) -> Vec<Triplet> {
    let mut seen = HashSet::new();
    triplets
        .iter()
        .filter(|t| seen.insert((*t).clone()))
        .cloned()
        .collect()
}

/// Order-preserving deduplication for plain strings; empty entries are dropped.
pub fn dedupe_strings<I, S>(items: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in items {
        let item = item.as_ref().trim();
        if !item.is_empty() && seen.insert(item.to_string()) {
            out.push(item.to_string());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDefinition {
    pub name: String,
    pub definition: String,
}

impl RelationDefinition {
    pub fn new(name: &str, definition: &str) -> Result<Self> {
        let name = normalize_relation(name);
        let definition = definition.trim().to_string();
        if name.is_empty() {
            return Err(Error::InvalidSchema("relation name is empty".into()));
        }
        if definition.is_empty() {
            return Err(Error::InvalidSchema(format!(
                "relation `{name}` has an empty definition"
            )));
        }
        Ok(RelationDefinition { name, definition })
    }

    /// Text used to represent the relation in an embedding index.
    pub fn embedding_text(&self) -> String {
        format!("{}: {}", self.name, self.definition)
    }
}

/// Ordered set of relation definitions, keyed by normalized name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    entries: IndexMap<String, RelationDefinition>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a new relation; a name that is already present is an error.
    pub fn insert(&mut self, relation: RelationDefinition) -> Result<()> {
        if self.entries.contains_key(&relation.name) {
            return Err(Error::InvalidSchema(format!(
                "duplicate relation `{}`",
                relation.name
            )));
        }
        self.entries.insert(relation.name.clone(), relation);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&RelationDefinition> {
        self.entries.get(&normalize_relation(name))
    }

    pub fn definition(&self, name: &str) -> Option<&str> {
        self.get(name).map(|r| r.definition.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationDefinition> {
        self.entries.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn from_definitions(
        relations: impl IntoIterator<Item = RelationDefinition>,
    ) -> Result<Schema> {
        let mut schema = Schema::new();
        for relation in relations {
            schema.insert(relation)?;
        }
        Ok(schema)
    }
}

impl Serialize for Schema {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_map(self.entries.values().map(|r| (&r.name, &r.definition)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(rename = "triplets", default, skip_serializing_if = "Option::is_none")]
    pub reference_triplets: Option<Vec<Triplet>>,
}

/// How one open relation was handled by canonicalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CanonicalizationAction {
    Aligned {
        source_relation: String,
        target_relation: String,
    },
    /// No counterpart in a fixed target schema; the triplet was removed.
    Dropped { source_relation: String },
    /// No counterpart in a self-built schema; the relation was appended to it.
    Added { source_relation: String },
}

impl CanonicalizationAction {
    pub fn source_relation(&self) -> &str {
        match self {
            CanonicalizationAction::Aligned {
                source_relation, ..
            }
            | CanonicalizationAction::Dropped { source_relation }
            | CanonicalizationAction::Added { source_relation } => source_relation,
        }
    }

    pub fn target_relation(&self) -> Option<&str> {
        match self {
            CanonicalizationAction::Aligned {
                target_relation, ..
            } => Some(target_relation),
            _ => None,
        }
    }

    pub fn is_dropped(&self) -> bool {
        matches!(self, CanonicalizationAction::Dropped { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    Parse,
    DefinitionFallback,
    McqAmbiguous,
    Truncated,
    Retrieval,
    DocumentFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub kind: WarningKind,
    pub message: String,
}

impl Warning {
    pub fn new(kind: WarningKind, message: impl Into<String>) -> Self {
        Warning {
            kind,
            message: message.into(),
        }
    }
}

/// Per-kind warning tallies, ordered by kind.
pub type WarningCounts = std::collections::BTreeMap<WarningKind, usize>;

pub fn count_warnings<'a>(warnings: impl IntoIterator<Item = &'a Warning>) -> WarningCounts {
    let mut counts = WarningCounts::new();
    for w in warnings {
        *counts.entry(w.kind).or_default() += 1;
    }
    counts
}

/// Output of one pipeline pass over one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub document_id: String,
    pub iteration: usize,
    pub oie_triplets: Vec<Triplet>,
    pub definitions: IndexMap<String, String>,
    pub canonical_triplets: Vec<Triplet>,
    pub actions: Vec<CanonicalizationAction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExtractionRecord {
    pub fn empty(document_id: &str, iteration: usize) -> Self {
        ExtractionRecord {
            document_id: document_id.to_string(),
            iteration,
            oie_triplets: Vec::new(),
            definitions: IndexMap::new(),
            canonical_triplets: Vec::new(),
            actions: Vec::new(),
            warnings: Vec::new(),
            error: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str, r: &str, o: &str) -> Triplet {
        Triplet::new(s, r, o).unwrap()
    }

    #[test]
    fn normalize_relation_examples() {
        assert_eq!(normalize_relation("  bornOn "), "bornOn");
        assert_eq!(normalize_relation("cast  member"), "cast member");
        assert_eq!(normalize_relation("birthDate"), "birthDate");
        assert_eq!(normalize_relation("   "), "");
    }

    #[test]
    fn triplet_rejects_empty_and_delimited() {
        assert!(Triplet::new(" ", "r", "o").is_err());
        assert!(Triplet::new("s", "", "o").is_err());
        assert!(Triplet::new("s", "a, b", "o").is_err());
        assert!(Triplet::new("s", "[r]", "o").is_err());
        let ok = Triplet::new(" A ", " cast  member ", " B").unwrap();
        assert_eq!(ok.elements(), ["A", "cast member", "B"]);
    }

    #[test]
    fn dedupe_examples() {
        let a = t("A", "r", "B");
        assert_eq!(dedupe_triplets(&[a.clone(), a.clone()]), vec![a.clone()]);
        let c = t("A", "r", "C");
        assert_eq!(dedupe_triplets(&[a.clone(), c.clone()]), vec![a.clone(), c]);
        // " r " normalizes to "r" at construction, so these collapse.
        assert_eq!(dedupe_triplets(&[t("A", " r ", "B"), a.clone()]).len(), 1);
    }

    #[test]
    fn triplet_serde_is_a_three_element_array() {
        let json = serde_json::to_string(&t("A", "r", "B")).unwrap();
        assert_eq!(json, r#"["A","r","B"]"#);
        assert!(serde_json::from_str::<Triplet>(r#"["A","r"]"#).is_err());
    }

    #[test]
    fn schema_lookup_round_trips() {
        let mut schema = Schema::new();
        schema
            .insert(RelationDefinition::new(" cast  member", "Acted in it.").unwrap())
            .unwrap();
        assert_eq!(schema.definition("cast member"), Some("Acted in it."));
        assert_eq!(schema.definition("  cast member "), Some("Acted in it."));
        assert!(schema.definition("Cast member").is_none());
        assert!(schema
            .insert(RelationDefinition::new("cast member", "dup").unwrap())
            .is_err());
    }

    #[test]
    fn action_serde_tags() {
        let a = CanonicalizationAction::Aligned {
            source_relation: "bornOn".into(),
            target_relation: "birthDate".into(),
        };
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"aligned","source_relation":"bornOn","target_relation":"birthDate"}"#
        );
        let d: CanonicalizationAction =
            serde_json::from_str(r#"{"kind":"dropped","source_relation":"x"}"#).unwrap();
        assert!(d.is_dropped());
        assert_eq!(d.target_relation(), None);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn triplet() -> impl Strategy<Value = Triplet> {
            ("[ab]{1,2}", "[rs ]{1,3}", "[xy]{1,2}")
                .prop_filter_map("valid", |(s, r, o)| Triplet::new(s, r, o).ok())
        }

        proptest! {
            #[test]
            fn dedupe_is_idempotent(v in prop::collection::vec(triplet(), 0..20)) {
                let once = dedupe_triplets(&v);
                prop_assert_eq!(dedupe_triplets(&once), once);
            }
        }
    }
}
