//! Lenient parsers for model replies, plus the serializers used to put
//! triplets and lists into prompts.
//!
//! Lists are written Python-repr style (`[['A', 'r', 'B']]`). The parser
//! accepts that format with any of `'` `"` `` ` `` or curly quotes, trailing
//! commas, prose around the list and unquoted three-element groups. Anything
//! it cannot use is skipped and reported as a warning rather than failing.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{normalize_relation, Triplet};

/// A parsed value together with the problems met while parsing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

const SINGLE_FAMILY: &[char] = &['\'', '\u{2018}', '\u{2019}', '`'];
const DOUBLE_FAMILY: &[char] = &['"', '\u{201C}', '\u{201D}'];

fn quote_family(c: char) -> Option<&'static [char]> {
    if SINGLE_FAMILY.contains(&c) {
        Some(SINGLE_FAMILY)
    } else if DOUBLE_FAMILY.contains(&c) {
        Some(DOUBLE_FAMILY)
    } else {
        None
    }
}

#[derive(Default)]
struct Slot {
    quoted: Option<String>,
    bare: String,
    doubled: bool,
}

impl Slot {
    fn is_blank(&self) -> bool {
        self.quoted.is_none() && self.bare.trim().is_empty()
    }
}

#[derive(Default)]
struct Frame {
    slots: Vec<Slot>,
    current: Slot,
    nested: bool,
}

/// Outcome for one innermost bracket group.
#[derive(Debug, PartialEq)]
enum Group {
    Elements(Vec<String>),
    Empty,
    Malformed(String),
}

impl Frame {
    fn finish(mut self) -> Group {
        let last = std::mem::take(&mut self.current);
        if !last.is_blank() || last.doubled {
            self.slots.push(last);
        }
        if self.slots.is_empty() {
            return Group::Empty;
        }
        if self.slots.iter().any(|s| s.doubled) {
            return Group::Malformed("adjacent quoted strings without a comma".into());
        }
        let quoted = self.slots.iter().filter(|s| s.quoted.is_some()).count();
        if quoted == self.slots.len() {
            if self.slots.iter().any(|s| !s.bare.trim().is_empty()) {
                return Group::Malformed("text outside quotes".into());
            }
            Group::Elements(self.slots.into_iter().filter_map(|s| s.quoted).collect())
        } else if quoted == 0 {
            if self.slots.iter().any(Slot::is_blank) {
                return Group::Malformed("empty element".into());
            }
            Group::Elements(
                self.slots
                    .into_iter()
                    .map(|s| s.bare.trim().to_string())
                    .collect(),
            )
        } else {
            Group::Malformed("mix of quoted and unquoted elements".into())
        }
    }
}

/// Reads a quoted string starting at `chars[start]` (the opening quote).
/// The string closes at a quote of the same family that is followed, after
/// optional whitespace, by `,`, `]` or the end of input. Returns the decoded
/// string and the index just past the closing quote.
fn read_quoted(chars: &[char], start: usize) -> Option<(String, usize)> {
    let family = quote_family(chars[start])?;
    let mut out = String::new();
    let mut i = start + 1;
    while i < chars.len() {
        let c = chars[i];
        if c == '\\' && i + 1 < chars.len() {
            out.push(match chars[i + 1] {
                'n' => '\n',
                't' => '\t',
                'r' => '\r',
                other => other,
            });
            i += 2;
            continue;
        }
        if family.contains(&c) {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, None | Some(',') | Some(']')) {
                return Some((out, i + 1));
            }
        }
        out.push(c);
        i += 1;
    }
    None
}

/// Scans `text` for innermost bracket groups, in order of appearance.
fn scan_groups(text: &str) -> Vec<Group> {
    let chars: Vec<char> = text.chars().collect();
    let mut stack: Vec<Frame> = Vec::new();
    let mut groups = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match stack.last_mut() {
            None => {
                if c == '[' {
                    stack.push(Frame::default());
                }
                i += 1;
            }
            Some(frame) => match c {
                '[' => {
                    frame.nested = true;
                    stack.push(Frame::default());
                    i += 1;
                }
                ']' => {
                    let frame = stack.pop().expect("non-empty stack");
                    if !frame.nested {
                        groups.push(frame.finish());
                    }
                    i += 1;
                }
                ',' => {
                    let slot = std::mem::take(&mut frame.current);
                    frame.slots.push(slot);
                    i += 1;
                }
                _ if quote_family(c).is_some() && frame.current.bare.trim().is_empty() => {
                    match read_quoted(&chars, i) {
                        Some((s, next)) => {
                            if frame.current.quoted.is_some() {
                                frame.current.doubled = true;
                            } else {
                                frame.current.quoted = Some(s);
                            }
                            i = next;
                        }
                        None => {
                            frame.current.bare.push(c);
                            i += 1;
                        }
                    }
                }
                _ => {
                    if frame.current.quoted.is_none() || !c.is_whitespace() {
                        frame.current.bare.push(c);
                    }
                    i += 1;
                }
            },
        }
    }
    if !stack.is_empty() {
        groups.push(Group::Malformed("unterminated list".into()));
    }
    groups
}

/// Extracts every well-formed `[subject, relation, object]` group.
pub fn parse_triplet_list(text: &str) -> Parsed<Vec<Triplet>> {
    let mut value = Vec::new();
    let mut warnings = Vec::new();
    let mut saw_empty_list = false;
    for (n, group) in scan_groups(text).into_iter().enumerate() {
        match group {
            Group::Empty => saw_empty_list = true,
            Group::Malformed(why) => warnings.push(format!("group {}: {why}", n + 1)),
            Group::Elements(e) if e.len() != 3 => warnings.push(format!(
                "group {}: expected 3 elements, found {}",
                n + 1,
                e.len()
            )),
            Group::Elements(e) => match Triplet::new(&e[0], &e[1], &e[2]) {
                Ok(t) => value.push(t),
                Err(err) => warnings.push(format!("group {}: {err}", n + 1)),
            },
        }
    }
    if value.is_empty() && !saw_empty_list {
        warnings.push("no triplet could be parsed from the reply".into());
    }
    Parsed { value, warnings }
}

/// Extracts the quoted (or comma separated) strings of every innermost list.
pub fn parse_string_list(text: &str) -> Parsed<Vec<String>> {
    let mut value = Vec::new();
    let mut warnings = Vec::new();
    let mut saw_list = false;
    for (n, group) in scan_groups(text).into_iter().enumerate() {
        match group {
            Group::Empty => saw_list = true,
            Group::Elements(e) => {
                saw_list = true;
                value.extend(
                    e.into_iter()
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty()),
                );
            }
            Group::Malformed(why) => warnings.push(format!("group {}: {why}", n + 1)),
        }
    }
    if !saw_list {
        warnings.push("no list could be parsed from the reply".into());
    }
    Parsed { value, warnings }
}

fn quote(s: &str) -> String {
    let (open, family) = if s.contains('\'') && !s.contains('"') {
        ('"', DOUBLE_FAMILY)
    } else {
        ('\'', SINGLE_FAMILY)
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(open);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if family.contains(&c) => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(open);
    out
}

pub fn format_triplet(t: &Triplet) -> String {
    format!(
        "[{}, {}, {}]",
        quote(t.subject()),
        quote(t.relation()),
        quote(t.object())
    )
}

pub fn format_triplet_list(triplets: &[Triplet]) -> String {
    let inner: Vec<String> = triplets.iter().map(format_triplet).collect();
    format!("[{}]", inner.join(", "))
}

pub fn format_string_list<S: AsRef<str>>(items: &[S]) -> String {
    let inner: Vec<String> = items.iter().map(|s| quote(s.as_ref())).collect();
    format!("[{}]", inner.join(", "))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedDefinitions {
    /// Definitions found, in the order of the expected relations.
    pub definitions: IndexMap<String, String>,
    /// Expected relations the reply did not define.
    pub missing: Vec<String>,
}

fn strip_bullet(line: &str) -> &str {
    let mut s = line.trim();
    loop {
        let before = s;
        for prefix in ["- ", "* ", "\u{2022} ", "**"] {
            if let Some(rest) = s.strip_prefix(prefix) {
                s = rest.trim_start();
            }
        }
        let digits = s.chars().take_while(char::is_ascii_digit).count();
        if digits > 0 {
            let rest = &s[digits..];
            if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
                s = rest.trim_start();
            }
        }
        if s == before {
            return s;
        }
    }
}

fn clean_name(name: &str) -> String {
    let trimmed = name
        .trim()
        .trim_matches(|c: char| c == '*' || quote_family(c).is_some())
        .trim();
    normalize_relation(trimmed)
}

fn clean_sentence(text: &str) -> String {
    text.trim().trim_matches('*').trim().to_string()
}

/// Reads `name: sentence` lines for the expected relations.
pub fn parse_definitions(text: &str, expected: &[String]) -> Parsed<ParsedDefinitions> {
    let expected: Vec<String> = expected.iter().map(|e| normalize_relation(e)).collect();
    let mut found: IndexMap<String, String> = IndexMap::new();
    let mut warnings = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let line = strip_bullet(lines[i]);
        i += 1;
        let Some((name, rest)) = line.split_once(':') else {
            continue;
        };
        let name = clean_name(name);
        if !expected.contains(&name) {
            continue;
        }
        let mut sentence = clean_sentence(rest);
        if sentence.is_empty() {
            // Definition may sit on the following non-empty line.
            while i < lines.len() && lines[i].trim().is_empty() {
                i += 1;
            }
            if i < lines.len() {
                let next = strip_bullet(lines[i]);
                let next_is_name = next
                    .split_once(':')
                    .map(|(n, _)| expected.contains(&clean_name(n)))
                    .unwrap_or(false);
                if !next_is_name {
                    sentence = clean_sentence(next);
                    i += 1;
                }
            }
        }
        if sentence.is_empty() {
            warnings.push(format!("relation `{name}` has an empty definition"));
            continue;
        }
        if found.contains_key(&name) {
            warnings.push(format!(
                "relation `{name}` defined more than once; kept the first"
            ));
            continue;
        }
        found.insert(name, sentence);
    }
    let mut definitions = IndexMap::new();
    let mut missing = Vec::new();
    for name in &expected {
        match found.get(name) {
            Some(d) => {
                definitions.insert(name.clone(), d.clone());
            }
            None if !missing.contains(name) => missing.push(name.clone()),
            None => {}
        }
    }
    Parsed {
        value: ParsedDefinitions {
            definitions,
            missing,
        },
        warnings,
    }
}

/// Answer to a multiple-choice canonicalization question.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McqChoice {
    Candidate(usize),
    NoneOfTheAbove,
}

/// Letter naming option `index` (`A` for 0).
pub fn choice_letter(index: usize) -> char {
    (b'A' + index as u8) as char
}

/// Interprets an MCQ reply over `num_candidates` candidate options labelled
/// `A`, `B`, ...; the letter right after the last candidate means "none of
/// the above". The reply must name exactly one distinct valid letter.
pub fn parse_mcq_answer(text: &str, num_candidates: usize) -> Result<McqChoice> {
    if num_candidates > 25 {
        return Err(Error::Precondition("at most 25 MCQ candidates".into()));
    }
    let chars: Vec<char> = text.chars().collect();
    let mut letters: Vec<usize> = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_ascii_uppercase() {
            continue;
        }
        let before_ok = i == 0 || !chars[i - 1].is_alphanumeric();
        let after_ok = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        let index = (c as u8 - b'A') as usize;
        if before_ok && after_ok && index <= num_candidates && !letters.contains(&index) {
            letters.push(index);
        }
    }
    match letters.as_slice() {
        [index] if *index == num_candidates => Ok(McqChoice::NoneOfTheAbove),
        [index] => Ok(McqChoice::Candidate(*index)),
        [] if text.to_lowercase().contains("none of the above") => Ok(McqChoice::NoneOfTheAbove),
        _ => Err(Error::AmbiguousMcq(text.to_string())),
    }
}
