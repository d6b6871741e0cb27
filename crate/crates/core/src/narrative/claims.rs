use serde::{Deserialize, Serialize};

use super::lexicon::{find_phrase, Lexicon};
use crate::attribution::Direction;
use crate::cohort::Feature;

/// What a sentence asserts about a feature's value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClaimedStatus {
    Normal,
    High,
    Low,
    Administered,
    NotAdministered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub feature: Feature,
    pub value: Option<f64>,
    pub status: Option<ClaimedStatus>,
    pub direction: Option<Direction>,
    pub text: String,
}

// checked in order, so longer phrases shadow their substrings
const STATUS_WORDS: [(&str, ClaimedStatus); 17] = [
    ("not administered", ClaimedStatus::NotAdministered),
    ("no use", ClaimedStatus::NotAdministered),
    ("administered", ClaimedStatus::Administered),
    ("within normal range", ClaimedStatus::Normal),
    ("normal", ClaimedStatus::Normal),
    ("reassuring", ClaimedStatus::Normal),
    ("unremarkable", ClaimedStatus::Normal),
    ("elevated", ClaimedStatus::High),
    ("high", ClaimedStatus::High),
    ("raised", ClaimedStatus::High),
    ("increased", ClaimedStatus::High),
    ("prolonged", ClaimedStatus::High),
    ("low", ClaimedStatus::Low),
    ("reduced", ClaimedStatus::Low),
    ("decreased", ClaimedStatus::Low),
    ("depressed", ClaimedStatus::Low),
    ("given", ClaimedStatus::Administered),
];

const DIRECTION_WORDS: [(&str, Direction); 12] = [
    ("no net effect", Direction::Neutral),
    ("increases predicted risk", Direction::RiskUp),
    ("decreases predicted risk", Direction::RiskDown),
    ("increases risk", Direction::RiskUp),
    ("raises risk", Direction::RiskUp),
    ("raises the risk", Direction::RiskUp),
    ("higher risk", Direction::RiskUp),
    ("worsens", Direction::RiskUp),
    ("decreases risk", Direction::RiskDown),
    ("lowers risk", Direction::RiskDown),
    ("reduces risk", Direction::RiskDown),
    ("lower risk", Direction::RiskDown),
];

pub fn direction_in(text: &str) -> Option<Direction> {
    DIRECTION_WORDS
        .iter()
        .find(|(p, _)| find_phrase(text, p).is_some())
        .map(|(_, d)| *d)
}

pub fn status_in(text: &str) -> Option<ClaimedStatus> {
    // direction phrases contain words like "lower"; strip them first
    let mut t = text.to_ascii_lowercase();
    for (p, _) in DIRECTION_WORDS {
        t = t.replace(p, " ");
    }
    STATUS_WORDS
        .iter()
        .filter_map(|(p, s)| find_phrase(&t, p).map(|i| (i, p.len(), *s)))
        .min_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, _, s)| s)
}

/// First number in the text, if any.
pub fn first_number(text: &str) -> Option<f64> {
    numbers(text).into_iter().next()
}

/// All decimal numbers, reading a leading minus only when it is not a hyphen
/// inside a word.
pub fn numbers(text: &str) -> Vec<f64> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i].is_ascii_digit() {
            let prev_alpha = i > 0 && (b[i - 1].is_ascii_alphabetic() || b[i - 1] == b'_');
            let start = if i > 0 && b[i - 1] == b'-' && (i < 2 || !b[i - 2].is_ascii_alphanumeric()) {
                i - 1
            } else {
                i
            };
            let mut j = i;
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
            if j + 1 < b.len() && b[j] == b'.' && b[j + 1].is_ascii_digit() {
                j += 1;
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
            }
            // digits glued to a word, like SpO2, are part of the name
            if !prev_alpha {
                if let Ok(v) = text[start..j].parse() {
                    out.push(v);
                }
            }
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// Lines and sentences; a full stop only ends a sentence when followed by
/// whitespace, so decimals survive.
pub fn segments(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut start = 0;
        let bytes = line.as_bytes();
        for i in 0..bytes.len() {
            if matches!(bytes[i], b'.' | b'!' | b'?') && bytes.get(i + 1).is_some_and(|c| c.is_ascii_whitespace()) {
                out.push(&line[start..=i]);
                start = i + 1;
            }
        }
        out.push(&line[start..]);
    }
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Pattern-matched claims: each feature mention owns the text up to the
/// next mention in the same sentence.
pub fn extract_claims(text: &str, lexicon: &Lexicon) -> Vec<Claim> {
    let mut claims = Vec::new();
    for seg in segments(text) {
        let mentions = lexicon.find_mentions(seg);
        for (k, m) in mentions.iter().enumerate() {
            let end = mentions.get(k + 1).map_or(seg.len(), |n| n.start);
            let tail = &seg[m.end..end];
            claims.push(Claim {
                feature: m.feature,
                value: first_number(tail),
                status: status_in(tail),
                direction: direction_in(tail),
                text: seg[m.start..end].trim().to_string(),
            });
        }
    }
    claims
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_reading() {
        assert_eq!(numbers("SpO2 85 and INR 3.25."), vec![85.0, 3.25]);
        assert_eq!(numbers("value -4.5 vs non-3"), vec![-4.5, 3.0]);
        assert_eq!(first_number("none here"), None);
    }

    #[test]
    fn claims_from_sentences() {
        let lex = Lexicon::builtin();
        let c = extract_claims("BUN 50 elevated, raises risk. SpO2 85 is reassuring.", &lex);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].feature, Feature::BunMin);
        assert_eq!(c[0].value, Some(50.0));
        assert_eq!(c[0].status, Some(ClaimedStatus::High));
        assert_eq!(c[0].direction, Some(Direction::RiskUp));
        assert_eq!(c[1].feature, Feature::Spo2Min);
        assert_eq!(c[1].value, Some(85.0));
        assert_eq!(c[1].status, Some(ClaimedStatus::Normal));
        assert_eq!(c[1].direction, None);
    }

    #[test]
    fn driver_lines_parse() {
        let lex = Lexicon::builtin();
        let c = extract_claims(
            "- SBP: 78 mmHg (imputed), severely low; increases predicted risk.\n- Norepinephrine: 0, not administered; decreases predicted risk.",
            &lex,
        );
        assert_eq!(c[0].status, Some(ClaimedStatus::Low));
        assert_eq!(c[0].direction, Some(Direction::RiskUp));
        assert_eq!(c[1].value, Some(0.0));
        assert_eq!(c[1].status, Some(ClaimedStatus::NotAdministered));
        assert_eq!(c[1].direction, Some(Direction::RiskDown));
    }
}
