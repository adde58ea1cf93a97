//! Few-shot prompt templates with `{name}` placeholders.
//!
//! `{{` and `}}` produce literal braces; a `{` not followed by an identifier
//! and `}` is copied verbatim. Substituted values are never re-scanned.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FEW_SHOT_COUNT: usize = 6;

/// Placeholder that receives the rendered example block.
pub const EXAMPLES_VAR: &str = "examples";
/// Name under which an example's expected output is bound in `example_text`.
pub const OUTPUT_VAR: &str = "output";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub fields: IndexMap<String, String>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_text: String,
    /// Layout of one example; rendered with the example's fields plus `{output}`.
    pub example_text: String,
    pub few_shot_examples: Vec<FewShotExample>,
}

impl PromptTemplate {
    pub fn new(template_text: impl Into<String>) -> Self {
        PromptTemplate {
            template_text: template_text.into(),
            example_text: String::new(),
            few_shot_examples: Vec::new(),
        }
    }

    pub fn with_examples(
        mut self,
        example_text: impl Into<String>,
        examples: Vec<FewShotExample>,
    ) -> Self {
        self.example_text = example_text.into();
        self.few_shot_examples = examples;
        self
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        scan(&self.template_text, |piece| {
            if let Piece::Var(name) = piece {
                if !names.iter().any(|n| n == name) {
                    names.push(name.to_string());
                }
            }
        });
        names
    }

    /// Renders the examples block (`Example 1:` ...) and then the template.
    pub fn render(&self, vars: &IndexMap<String, String>) -> Result<String> {
        let mut all = vars.clone();
        if !all.contains_key(EXAMPLES_VAR) {
            all.insert(EXAMPLES_VAR.to_string(), self.render_examples()?);
        }
        substitute(&self.template_text, &all)
    }

    fn render_examples(&self) -> Result<String> {
        let mut blocks = Vec::with_capacity(self.few_shot_examples.len());
        for (i, example) in self.few_shot_examples.iter().enumerate() {
            let mut vars = example.fields.clone();
            vars.insert(OUTPUT_VAR.to_string(), example.output.clone());
            let body = substitute(&self.example_text, &vars)?;
            blocks.push(format!("Example {}:\n\n{}", i + 1, body));
        }
        Ok(blocks.join("\n\n"))
    }
}

enum Piece<'a> {
    Text(&'a str),
    Var(&'a str),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn scan<'a>(text: &'a str, mut emit: impl FnMut(Piece<'a>)) {
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                emit(Piece::Text(&text[start..i + 1]));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                emit(Piece::Text(&text[start..i + 1]));
                i += 2;
                start = i;
            }
            b'{' => {
                let close = text[i + 1..].find('}').map(|off| i + 1 + off);
                match close {
                    Some(end) if is_ident(&text[i + 1..end]) => {
                        emit(Piece::Text(&text[start..i]));
                        emit(Piece::Var(&text[i + 1..end]));
                        i = end + 1;
                        start = i;
                    }
                    _ => i += 1,
                }
            }
            _ => i += 1,
        }
    }
    emit(Piece::Text(&text[start..]));
}

/// Replaces every `{name}` in `text` with `vars[name]`.
pub fn substitute(text: &str, vars: &IndexMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut missing = None;
    scan(text, |piece| match piece {
        Piece::Text(t) => out.push_str(t),
        Piece::Var(name) => match vars.get(name) {
            Some(v) => out.push_str(v),
            None => {
                missing.get_or_insert_with(|| name.to_string());
            }
        },
    });
    match missing {
        Some(name) => Err(Error::UnboundPlaceholder(name)),
        None => Ok(out),
    }
}

/// Convenience for building variable maps in call sites and tests.
pub fn vars<const N: usize>(pairs: [(&str, String); N]) -> IndexMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_placeholders_renders_verbatim() {
        let t = PromptTemplate::new("Plain text, with } and { braces.");
        assert_eq!(
            t.render(&IndexMap::new()).unwrap(),
            "Plain text, with } and { braces."
        );
    }

    #[test]
    fn unbound_placeholder_is_an_error() {
        let t = PromptTemplate::new("Hello {name}");
        assert!(matches!(
            t.render(&IndexMap::new()),
            Err(Error::UnboundPlaceholder(n)) if n == "name"
        ));
    }

    #[test]
    fn escaped_braces_and_values_not_rescanned() {
        let t = PromptTemplate::new("{{x}} {a}");
        let out = t.render(&vars([("a", "{b}".to_string())])).unwrap();
        assert_eq!(out, "{x} {b}");
    }

    #[test]
    fn examples_are_numbered_in_order() {
        let ex = |text: &str, out: &str| FewShotExample {
            fields: vars([("text", text.to_string())]),
            output: out.to_string(),
        };
        let t = PromptTemplate::new("Task.\n\n{examples}\n\nQuery: {text}").with_examples(
            "Text: {text}\nOut: {output}",
            vec![ex("one", "1"), ex("two", "2")],
        );
        assert_eq!(t.placeholders(), vec!["examples", "text"]);
        let out = t.render(&vars([("text", "three".to_string())])).unwrap();
        assert_eq!(
            out,
            "Task.\n\nExample 1:\n\nText: one\nOut: 1\n\nExample 2:\n\nText: two\nOut: 2\n\nQuery: three"
        );
        assert_eq!(
            out,
            t.render(&vars([("text", "three".to_string())])).unwrap()
        );
    }
}
