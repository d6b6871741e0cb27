use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::NarrativeError;
use crate::cohort::{Feature, FEATURES};

/// Synonyms per tabular feature, matched case-insensitively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub schema_version: u32,
    pub synonyms: BTreeMap<Feature, Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mention {
    pub feature: Feature,
    /// Byte range in the ASCII-lowercased text (same offsets as the input).
    pub start: usize,
    pub end: usize,
}

impl Lexicon {
    pub fn builtin() -> Self {
        Self::from_json(include_str!("../../data/lexicon.json")).expect("bundled lexicon is valid")
    }

    pub fn from_json(s: &str) -> Result<Self, NarrativeError> {
        let mut lex: Lexicon = serde_json::from_str(s).map_err(|e| NarrativeError::Format(format!("lexicon: {e}")))?;
        for f in FEATURES {
            match lex.synonyms.get_mut(&f) {
                Some(list) if !list.is_empty() => {
                    for s in list.iter_mut() {
                        *s = s.trim().to_ascii_lowercase();
                    }
                    if list.iter().any(String::is_empty) {
                        return Err(NarrativeError::Format(format!(
                            "lexicon: empty synonym for {}",
                            f.key()
                        )));
                    }
                }
                _ => return Err(NarrativeError::Format(format!("lexicon: no synonyms for {}", f.key()))),
            }
        }
        Ok(lex)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NarrativeError> {
        let s = std::fs::read_to_string(path).map_err(|e| NarrativeError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    /// Non-overlapping mentions, leftmost first and longest synonym on ties.
    pub fn find_mentions(&self, text: &str) -> Vec<Mention> {
        let lower = text.to_ascii_lowercase();
        let mut hits = Vec::new();
        for (f, list) in &self.synonyms {
            for syn in list {
                for (start, _) in lower.match_indices(syn.as_str()) {
                    let end = start + syn.len();
                    if at_word_boundary(&lower, start, end) {
                        hits.push(Mention {
                            feature: *f,
                            start,
                            end,
                        });
                    }
                }
            }
        }
        hits.sort_by(|a, b| {
            a.start
                .cmp(&b.start)
                .then(b.end.cmp(&a.end))
                .then(a.feature.cmp(&b.feature))
        });
        let mut out: Vec<Mention> = Vec::new();
        for h in hits {
            if out.last().is_none_or(|m| h.start >= m.end) {
                out.push(h);
            }
        }
        out
    }
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// A match must not continue a word on either side. Edges of the phrase
/// that are punctuation impose no constraint.
pub fn at_word_boundary(text: &str, start: usize, end: usize) -> bool {
    let phrase = &text[start..end];
    let first_word = phrase.chars().next().is_some_and(is_word);
    let last_word = phrase.chars().next_back().is_some_and(is_word);
    let before_ok = !first_word || text[..start].chars().next_back().is_none_or(|c| !is_word(c));
    let after_ok = !last_word || text[end..].chars().next().is_none_or(|c| !is_word(c));
    before_ok && after_ok
}

/// Case-insensitive, word-bounded phrase search.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    find_phrase(text, phrase).is_some()
}

pub fn find_phrase(text: &str, phrase: &str) -> Option<usize> {
    let p = phrase.to_ascii_lowercase();
    if p.is_empty() {
        return None;
    }
    let lower = text.to_ascii_lowercase();
    lower
        .match_indices(p.as_str())
        .map(|(i, _)| i)
        .find(|&i| at_word_boundary(&lower, i, i + p.len()))
}

/// Binary mention vector in [`FEATURES`] order.
pub fn extract_feature_mentions(text: &str, lexicon: &Lexicon) -> Vec<u8> {
    let mut v = vec![0u8; FEATURES.len()];
    for m in lexicon.find_mentions(text) {
        v[m.feature.index()] = 1;
    }
    v
}
