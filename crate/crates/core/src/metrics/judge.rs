use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::MetricsError;
use crate::narrative::{chat_completion, contains_phrase, ChatError, INTEGRATION_HEADING, SECTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub faithfulness: f64,
    pub plausibility: f64,
    pub usefulness: f64,
    pub sensemaking: f64,
    pub overall: f64,
    pub coherence: f64,
}

pub trait JudgeClient: Sync {
    fn name(&self) -> &str;
    fn score(&self, narrative: &str, context: &str) -> Result<JudgeScores, MetricsError>;
}

/// Keywords per rubric dimension used by [`StubJudge`].
pub const RUBRIC: [(&str, [&str; 3]); 4] = [
    ("faithfulness", ["drivers", "predicted risk", "evidence"]),
    ("plausibility", ["clinical", "threshold", "normal range"]),
    ("usefulness", ["monitor", "actionable", "reassess"]),
    ("sensemaking", ["taken together", "overall", "because"]),
];

/// Share of the six section headings present in order.
pub fn coherence_score(text: &str) -> f64 {
    let lower = text.to_ascii_lowercase();
    let mut headings: Vec<String> = SECTIONS
        .iter()
        .map(|(k, _, h)| format!("{k}. {h}").to_ascii_lowercase())
        .collect();
    headings.push(INTEGRATION_HEADING.to_ascii_lowercase());
    let mut pos = 0;
    let mut found = 0;
    for h in &headings {
        if let Some(i) = lower[pos..].find(h.as_str()) {
            found += 1;
            pos += i + h.len();
        }
    }
    found as f64 / headings.len() as f64
}

/// Deterministic offline judge: each dimension is the share of its rubric
/// keywords present in the narrative.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubJudge;

impl JudgeClient for StubJudge {
    fn name(&self) -> &str {
        "STUB"
    }

    fn score(&self, narrative: &str, _context: &str) -> Result<JudgeScores, MetricsError> {
        let dim = |i: usize| RUBRIC[i].1.iter().filter(|k| contains_phrase(narrative, k)).count() as f64 / 3.0;
        let (f, p, u, s) = (dim(0), dim(1), dim(2), dim(3));
        Ok(JudgeScores {
            faithfulness: f,
            plausibility: p,
            usefulness: u,
            sensemaking: s,
            overall: (f + p + u + s) / 4.0,
            coherence: coherence_score(narrative),
        })
    }
}

const JUDGE_INSTRUCTIONS: &str = "You grade a clinical explanation of a predicted mortality risk against its source context. \
Score each dimension between 0 and 1: faithfulness (agrees with the context), plausibility (clinically sound), \
usefulness (actionable for a clinician), sensemaking (helps the reader understand the case), coherence (well organised). \
Reply with a single JSON object with keys faithfulness, plausibility, usefulness, sensemaking, coherence and optionally overall.";

/// Chat-completions judge at temperature 0.
#[derive(Debug, Clone)]
pub struct HttpJudge {
    pub url: String,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
}

impl HttpJudge {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            timeout: Duration::from_secs(120),
            retries: 2,
        }
    }
}

/// Read the scores from the first `{...}` block of a reply.
pub(super) fn parse_judge_reply(raw: &str, narrative: &str) -> Result<JudgeScores, MetricsError> {
    let bad = || MetricsError::MalformedJudgeResponse(raw.to_string());
    let (Some(a), Some(b)) = (raw.find('{'), raw.rfind('}')) else {
        return Err(bad());
    };
    if b < a {
        return Err(bad());
    }
    let v: Value = serde_json::from_str(&raw[a..=b]).map_err(|_| bad())?;
    let get = |k: &str| v.get(k).and_then(Value::as_f64);
    let (Some(f), Some(p), Some(u), Some(s)) = (
        get("faithfulness"),
        get("plausibility"),
        get("usefulness"),
        get("sensemaking"),
    ) else {
        return Err(bad());
    };
    Ok(JudgeScores {
        faithfulness: f,
        plausibility: p,
        usefulness: u,
        sensemaking: s,
        overall: get("overall").unwrap_or((f + p + u + s) / 4.0),
        coherence: get("coherence").unwrap_or_else(|| coherence_score(narrative)),
    })
}

impl JudgeClient for HttpJudge {
    fn name(&self) -> &str {
        &self.model
    }

    fn score(&self, narrative: &str, context: &str) -> Result<JudgeScores, MetricsError> {
        let user = format!("CONTEXT:\n{context}\n\nEXPLANATION:\n{narrative}");
        match chat_completion(
            &self.url,
            &self.model,
            JUDGE_INSTRUCTIONS,
            &user,
            0.0,
            self.timeout,
            self.retries,
        ) {
            Ok(reply) => parse_judge_reply(&reply, narrative),
            Err(ChatError::Malformed(raw)) => Err(MetricsError::MalformedJudgeResponse(raw)),
            Err(ChatError::Timeout { retries }) => Err(MetricsError::JudgeUnavailable(format!(
                "timed out after {retries} retries"
            ))),
            Err(ChatError::Transport(m)) => Err(MetricsError::JudgeUnavailable(m)),
        }
    }
}

/// Ask the judge and check every score lies in [0, 1].
pub fn judge_scores(judge: &dyn JudgeClient, narrative: &str, context: &str) -> Result<JudgeScores, MetricsError> {
    let s = judge.score(narrative, context)?;
    let all = [
        s.faithfulness,
        s.plausibility,
        s.usefulness,
        s.sensemaking,
        s.overall,
        s.coherence,
    ];
    if all.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(MetricsError::MalformedJudgeResponse(format!(
            "score out of range: {s:?}"
        )));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_extremes() {
        let all: Vec<&str> = RUBRIC.iter().flat_map(|(_, k)| k.iter().copied()).collect();
        let s = judge_scores(&StubJudge, &all.join(". "), "").unwrap();
        assert_eq!(
            [s.faithfulness, s.plausibility, s.usefulness, s.sensemaking, s.overall],
            [1.0; 5]
        );
        let z = judge_scores(&StubJudge, "", "").unwrap();
        assert_eq!(
            [
                z.faithfulness,
                z.plausibility,
                z.usefulness,
                z.sensemaking,
                z.overall,
                z.coherence
            ],
            [0.0; 6]
        );
    }

    #[test]
    fn reply_parsing() {
        let r = parse_judge_reply(
            "```json\n{\"faithfulness\":0.8,\"plausibility\":0.6,\"usefulness\":1,\"sensemaking\":0.6,\"coherence\":0.9}\n```",
            "",
        )
        .unwrap();
        assert!((r.overall - 0.75).abs() < 1e-12);
        assert_eq!(r.coherence, 0.9);
        assert!(matches!(
            parse_judge_reply("no json", ""),
            Err(MetricsError::MalformedJudgeResponse(_))
        ));
        assert!(matches!(
            parse_judge_reply("{\"faithfulness\":1}", ""),
            Err(MetricsError::MalformedJudgeResponse(_))
        ));
    }

    #[test]
    fn unreachable_judge() {
        let j = HttpJudge {
            url: "http://127.0.0.1:9/v1/chat/completions".into(),
            model: "m".into(),
            timeout: Duration::from_millis(300),
            retries: 0,
        };
        assert!(matches!(j.score("x", "y"), Err(MetricsError::JudgeUnavailable(_))));
    }

    #[test]
    fn coherence_counts_ordered_headings() {
        assert_eq!(
            coherence_score("A. MODEL DRIVERS\nx\nIntegrated interpretation\ny"),
            2.0 / 6.0
        );
        assert_eq!(coherence_score("nothing"), 0.0);
    }
}
