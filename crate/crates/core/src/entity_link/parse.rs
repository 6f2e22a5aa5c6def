//! Parsers for line-structured LLM replies.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::normalize::normalize_title;
use super::LinkError;
use crate::llm_gateway::prompts::SEP;

/// Parsed lines plus one warning per skipped line.
#[derive(Clone, Debug, PartialEq)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T> Default for Parsed<T> {
    fn default() -> Self {
        Self {
            items: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// An extracted `(surface, attitude)` pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionCandidate {
    pub surface: String,
    pub attitude: i8,
}

/// A `name####value` line with an integer value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoredLine {
    pub name: String,
    pub value: i8,
}

/// A `raw####correct####method` reflection line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReflectionLine {
    pub raw: String,
    /// Empty when the model answered with a blank name.
    pub correct: String,
    pub method: ReflectedMethod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReflectedMethod {
    Fuzzy,
    Bm25,
    None,
    Both,
}

/// Removes a leading list marker such as `- `, `* `, `3. ` or `3) `.
pub fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
        return rest.trim_start();
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return rest.trim_start();
        }
    }
    line
}

/// Applies `parse_line` to every non-empty line. Bad lines become warnings;
/// the reply as a whole is rejected when more than half of at least two
/// non-empty lines are bad.
pub fn parse_lines<T>(
    text: &str,
    what: &'static str,
    mut parse_line: impl FnMut(&str) -> Result<T, String>,
) -> Result<Parsed<T>, LinkError> {
    let mut out = Parsed::default();
    let mut non_empty = 0usize;
    for raw in text.lines() {
        let line = strip_list_marker(raw);
        if line.is_empty() {
            continue;
        }
        non_empty += 1;
        match parse_line(line) {
            Ok(v) => out.items.push(v),
            Err(reason) => out.warnings.push(format!("{what}: skipped line {line:?}: {reason}")),
        }
    }
    let malformed = out.warnings.len();
    if non_empty >= 2 && malformed * 2 > non_empty {
        return Err(LinkError::MalformedCompletion {
            what,
            malformed,
            total: non_empty,
        });
    }
    Ok(out)
}

/// Parses `name####k` with `k` an integer in `lo..=hi`.
pub fn parse_scored_line(line: &str, lo: i8, hi: i8) -> Result<ScoredLine, String> {
    let Some((name, value)) = line.rsplit_once(SEP) else {
        return Err(format!("missing {SEP} separator"));
    };
    let name = name.trim();
    if name.is_empty() {
        return Err("empty name".into());
    }
    let value: i8 = value
        .trim()
        .parse()
        .map_err(|_| format!("value {:?} is not an integer", value.trim()))?;
    if !(lo..=hi).contains(&value) {
        return Err(format!("value {value} outside {lo}..={hi}"));
    }
    Ok(ScoredLine {
        name: name.to_string(),
        value,
    })
}

/// Parses the extraction reply. `NO` means no mentions; repeated surfaces
/// (after normalization) keep their first occurrence.
pub fn parse_extraction(text: &str) -> Result<Parsed<MentionCandidate>, LinkError> {
    if text.trim().eq_ignore_ascii_case("no") {
        return Ok(Parsed::default());
    }
    let mut parsed = parse_lines(text, "extraction", |line| parse_scored_line(line, -2, 2))?;
    let mut seen = HashSet::new();
    parsed.items.retain(|l| seen.insert(normalize_title(&l.name)));
    Ok(Parsed {
        items: parsed
            .items
            .into_iter()
            .map(|l| MentionCandidate {
                surface: l.name,
                attitude: l.value,
            })
            .collect(),
        warnings: parsed.warnings,
    })
}

/// Parses the entity-reflection reply.
pub fn parse_entity_reflection(text: &str) -> Result<Parsed<ReflectionLine>, LinkError> {
    parse_lines(text, "entity reflection", |line| {
        let fields: Vec<&str> = line.split(SEP).collect();
        let [raw, correct, method] = fields[..] else {
            return Err(format!("expected 3 fields, found {}", fields.len()));
        };
        let raw = raw.trim();
        if raw.is_empty() {
            return Err("empty raw name".into());
        }
        let method = match method.trim().to_ascii_lowercase().as_str() {
            "fuzzy" => ReflectedMethod::Fuzzy,
            "bm25" => ReflectedMethod::Bm25,
            "none" => ReflectedMethod::None,
            "both" => ReflectedMethod::Both,
            other => return Err(format!("unknown method {other:?}")),
        };
        Ok(ReflectionLine {
            raw: raw.to_string(),
            correct: correct.trim().to_string(),
            method,
        })
    })
}

/// Parses a one-title-per-line list. A line is rejected only if it is a
/// structured line (contains the separator) or has no alphanumerics.
pub fn parse_title_list(text: &str, what: &'static str) -> Result<Parsed<String>, LinkError> {
    parse_lines(text, what, |line| {
        if line.contains(SEP) {
            Err(format!("unexpected {SEP} in title line"))
        } else if !line.chars().any(char::is_alphanumeric) {
            Err("no title text".into())
        } else {
            Ok(line.trim_matches('"').trim().to_string())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(s: &str, a: i8) -> MentionCandidate {
        MentionCandidate {
            surface: s.into(),
            attitude: a,
        }
    }

    #[test]
    fn extraction_examples() {
        let p = parse_extraction("Troll####2\nPan's Labyrinth####2").unwrap();
        assert_eq!(p.items, vec![cand("Troll", 2), cand("Pan's Labyrinth", 2)]);
        assert!(p.warnings.is_empty());

        assert!(parse_extraction("NO").unwrap().items.is_empty());
        assert!(parse_extraction("  no \n").unwrap().items.is_empty());

        let p = parse_extraction("The Hangover####-2\nSuperbad####-2").unwrap();
        assert_eq!(p.items, vec![cand("The Hangover", -2), cand("Superbad", -2)]);

        let p = parse_extraction("Inception##2").unwrap();
        assert!(p.items.is_empty());
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn extraction_range_and_duplicates() {
        let p = parse_extraction("A####3\nB####0\nC####x\nb####1\nD####+1").unwrap();
        assert_eq!(p.items, vec![cand("B", 0), cand("D", 1)]);
        assert_eq!(p.warnings.len(), 2);
    }

    #[test]
    fn majority_malformed_is_an_error() {
        assert!(matches!(
            parse_extraction("A##1\nB##2\nC####1"),
            Err(LinkError::MalformedCompletion { malformed: 2, total: 3, .. })
        ));
        // exactly half is tolerated
        assert_eq!(parse_extraction("A##1\nC####1").unwrap().items.len(), 1);
    }

    #[test]
    fn list_markers_are_stripped() {
        assert_eq!(strip_list_marker("1. Troll"), "Troll");
        assert_eq!(strip_list_marker("12) Troll"), "Troll");
        assert_eq!(strip_list_marker("- Troll"), "Troll");
        assert_eq!(strip_list_marker("2001: A Space Odyssey"), "2001: A Space Odyssey");
        let p = parse_title_list("1. Elite Squad\n2. \"City of God\"\n", "recommendation").unwrap();
        assert_eq!(p.items, vec!["Elite Squad", "City of God"]);
    }

    #[test]
    fn entity_reflection_lines() {
        let p = parse_entity_reflection("AvP####Alien vs. Predator####BM25\nFoo#### ####none").unwrap();
        assert_eq!(p.items[0].correct, "Alien vs. Predator");
        assert_eq!(p.items[0].method, ReflectedMethod::Bm25);
        assert_eq!(p.items[1].correct, "");
        assert_eq!(p.items[1].method, ReflectedMethod::None);
    }

    proptest! {
        #[test]
        fn never_panics_and_bounded_by_line_count(text in "(\\PC{0,20}(####-?[0-9])?\n){0,8}") {
            if let Ok(p) = parse_extraction(&text) {
                let non_empty = text.lines().filter(|l| !l.trim().is_empty()).count();
                prop_assert!(p.items.len() <= non_empty.max(1));
                prop_assert!(p.items.len() + p.warnings.len() <= non_empty.max(1));
                for c in &p.items {
                    prop_assert!((-2..=2).contains(&c.attitude));
                    prop_assert!(!c.surface.is_empty());
                }
            }
        }

        #[test]
        fn minority_malformed_never_errors(good in 1usize..6, bad in 0usize..6) {
            prop_assume!(bad <= good);
            let mut lines: Vec<String> = (0..good).map(|i| format!("Title {i}####1")).collect();
            lines.extend((0..bad).map(|i| format!("Broken {i}##1")));
            let p = parse_extraction(&lines.join("\n")).unwrap();
            prop_assert_eq!(p.items.len(), good);
            prop_assert_eq!(p.warnings.len(), bad);
        }
    }
}
