//! Dataset, schema, few-shot and results files.
//!
//! Datasets, few-shot examples and results are JSON lines, one record per
//! line. Schemas are either a JSON object `{name: definition}` or a CSV file
//! with a `name,definition` header.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::{DeserializeOwned, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::model::{Document, ExtractionRecord, RelationDefinition, Schema};
use crate::prompts::FewShotRecord;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses every non-blank line of `path` as a `T`.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value =
            serde_json::from_str(line).map_err(|e| Error::input(path, i + 1, e.to_string()))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Document>> {
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (line, doc) in read_jsonl::<Document>(path)? {
        if doc.id.trim().is_empty() {
            return Err(Error::input(path, line, "empty document id"));
        }
        if doc.text.trim().is_empty() {
            return Err(Error::input(
                path,
                line,
                format!("document {:?} has empty text", doc.id),
            ));
        }
        if !seen.insert(doc.id.clone()) {
            return Err(Error::input(
                path,
                line,
                format!("duplicate document id {:?}", doc.id),
            ));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_few_shot(path: &Path) -> Result<Vec<FewShotRecord>> {
    let records: Vec<FewShotRecord> = read_jsonl(path)?.into_iter().map(|(_, r)| r).collect();
    if records.is_empty() {
        return Err(Error::input(path, 0, "few-shot file has no records"));
    }
    Ok(records)
}

pub fn load_results(path: &Path) -> Result<Vec<ExtractionRecord>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

/// JSON object entries in file order, rejecting repeated keys.
struct OrderedPairs(Vec<(String, String)>);

impl<'de> Deserialize<'de> for OrderedPairs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedPairs;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping relation names to definitions")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<OrderedPairs, A::Error> {
                let mut seen = HashSet::new();
                let mut pairs = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    if !seen.insert(k.clone()) {
                        return Err(serde::de::Error::custom(format!(
                            "duplicate relation {k:?}"
                        )));
                    }
                    pairs.push((k, v));
                }
                Ok(OrderedPairs(pairs))
            }
        }
        d.deserialize_map(V)
    }
}

fn schema_from_pairs(
    path: &Path,
    pairs: impl IntoIterator<Item = (usize, String, String)>,
) -> Result<Schema> {
    let mut schema = Schema::new();
    for (line, name, def) in pairs {
        let rel = RelationDefinition::new(&name, &def)
            .map_err(|e| Error::input(path, line, e.to_string()))?;
        schema
            .insert(rel)
            .map_err(|e| Error::input(path, line, e.to_string()))?;
    }
    Ok(schema)
}

pub fn load_schema(path: &Path) -> Result<Schema> {
    let text = read(path)?;
    if text.trim().is_empty() {
        return Ok(Schema::new());
    }
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::input(path, 1, e.to_string()))?
            .clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::input(path, 1, format!("missing `{name}` column")))
        };
        let (ni, di) = (col("name")?, col("definition")?);
        let mut rows = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Error::input(path, line, e.to_string())
            })?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            rows.push((
                line,
                row.get(ni).unwrap_or("").to_string(),
                row.get(di).unwrap_or("").to_string(),
            ));
        }
        return schema_from_pairs(path, rows);
    }
    let pairs: OrderedPairs =
        serde_json::from_str(&text).map_err(|e| Error::input(path, e.line(), e.to_string()))?;
    schema_from_pairs(path, pairs.0.into_iter().map(|(n, d)| (0, n, d)))
}

pub fn write_schema(path: &Path, schema: &Schema) -> Result<()> {
    write_json(path, schema)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value).expect("serializable value");
    body.push('\n');
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("serializable record");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_results(path: &Path, records: &[ExtractionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// SHA-256 of a file's bytes, for manifests.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    use sha2::{Digest, Sha256};
    Ok(hex::encode(Sha256::digest(&bytes)))
}
