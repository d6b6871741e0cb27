use serde::{Deserialize, Serialize};

use super::NarrativeError;

/// Case-insensitive tokens that must never reach the model.
pub const FORBIDDEN_TOKENS: [&str; 3] = ["shap", "attribution", "coefficient"];
/// Further model-mechanics words stripped from evidence.
pub const MECHANICS_VOCABULARY: [&str; 5] = ["log-odds", "logit", "feature importance", "phi0", "base value"];
pub const TRUNCATION_MARKER: &str = "…[truncated]";
pub const NO_EVIDENCE: &str = "No evidence available.";

pub const DEFAULT_TEMPLATE: &str = include_str!("../../data/prompt_template.txt");

/// Section keys, placeholder names and headings, in prompt order.
pub const SECTIONS: [(char, &str, &str); 5] = [
    ('A', "drivers", "MODEL DRIVERS"),
    ('B', "tabular", "TABULAR PATIENT FEATURES"),
    ('C', "ontology", "ONTOLOGY EVIDENCE"),
    ('D', "knowledge", "CLINICAL KNOWLEDGE BASE"),
    ('E', "notes", "PATIENT NOTES"),
];
pub const INTEGRATION_HEADING: &str = "Integrated interpretation";

/// Character budgets per section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub drivers: usize,
    pub tabular: usize,
    pub ontology: usize,
    pub knowledge: usize,
    pub notes: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            drivers: 1600,
            tabular: 1800,
            ontology: 1500,
            knowledge: 1500,
            notes: 1000,
        }
    }
}

impl Budgets {
    pub fn as_array(&self) -> [usize; 5] {
        [self.drivers, self.tabular, self.ontology, self.knowledge, self.notes]
    }

    pub fn validate(&self) -> Result<(), NarrativeError> {
        if self.as_array().contains(&0) {
            return Err(NarrativeError::Format("prompt budgets must be positive".into()));
        }
        Ok(())
    }
}

/// Remove forbidden and mechanics tokens (ASCII case-insensitive) until none
/// remain, since a removal can splice a new occurrence together.
pub fn sanitize(text: &str) -> (String, bool) {
    let mut s = text.to_string();
    let mut changed = false;
    loop {
        let lower = s.to_ascii_lowercase();
        let hit = FORBIDDEN_TOKENS
            .iter()
            .chain(MECHANICS_VOCABULARY.iter())
            .filter_map(|t| lower.find(t).map(|i| (i, t.len())))
            .min();
        match hit {
            Some((i, len)) => {
                s.replace_range(i..i + len, "");
                changed = true;
            }
            None => return (s, changed),
        }
    }
}

pub fn contains_forbidden(text: &str) -> bool {
    let lower = text.to_ascii_lowercase();
    FORBIDDEN_TOKENS.iter().any(|t| lower.contains(t))
}

/// Clip to at most `budget` characters, cutting at a word boundary and
/// appending the truncation marker.
pub fn clip_to_budget(text: &str, budget: usize) -> String {
    let n = text.chars().count();
    if n <= budget {
        return text.to_string();
    }
    let tail = format!(" {TRUNCATION_MARKER}");
    let tail_len = tail.chars().count();
    if budget <= tail_len {
        return TRUNCATION_MARKER.chars().take(budget).collect();
    }
    let avail = budget - tail_len;
    let chars: Vec<char> = text.chars().collect();
    let mut cut = avail;
    if !chars[avail].is_whitespace() {
        cut = chars[..avail].iter().rposition(|c| c.is_whitespace()).unwrap_or(0);
    }
    let head: String = chars[..cut].iter().collect();
    let head = head.trim_end();
    if head.is_empty() {
        TRUNCATION_MARKER.to_string()
    } else {
        format!("{head}{tail}")
    }
}

/// A driver the narrative is expected to cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverRef {
    pub token: String,
    pub key: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSection {
    pub key: char,
    pub placeholder: String,
    pub heading: String,
    pub body: String,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub template: String,
    pub sections: Vec<PromptSection>,
    pub sanitized: bool,
    #[serde(default)]
    pub drivers: Vec<DriverRef>,
}

/// Check a template has every placeholder and no forbidden token.
pub fn validate_template(template: &str) -> Result<(), NarrativeError> {
    for (_, name, _) in SECTIONS {
        if !template.contains(&format!("{{{{{name}}}}}")) {
            return Err(NarrativeError::Format(format!("prompt template lacks {{{{{name}}}}}")));
        }
    }
    if !template.contains(INTEGRATION_HEADING) {
        return Err(NarrativeError::Format(format!(
            "prompt template lacks '{INTEGRATION_HEADING}'"
        )));
    }
    if contains_forbidden(template) {
        return Err(NarrativeError::Format(
            "prompt template contains a forbidden token".into(),
        ));
    }
    Ok(())
}

impl Prompt {
    pub fn section(&self, key: char) -> Option<&str> {
        self.sections.iter().find(|s| s.key == key).map(|s| s.body.as_str())
    }

    /// Rules block: template text before the first section heading.
    pub fn rules(&self) -> &str {
        let first = format!("A. {}", SECTIONS[0].2);
        match self.template.find(&first) {
            Some(i) => self.template[..i].trim_end(),
            None => "",
        }
    }

    /// Single pass substitution, so section text that looks like a
    /// placeholder is left alone.
    pub fn render(&self) -> String {
        let t = &self.template;
        let mut out = String::with_capacity(t.len() + 4096);
        let mut rest = t.as_str();
        while let Some(i) = rest.find("{{") {
            out.push_str(&rest[..i]);
            let after = &rest[i + 2..];
            match after.find("}}") {
                Some(j) => {
                    let name = &after[..j];
                    match self.sections.iter().find(|s| s.placeholder == name) {
                        Some(s) => out.push_str(&s.body),
                        None => out.push_str(&rest[i..i + 2 + j + 2]),
                    }
                    rest = &after[j + 2..];
                }
                None => {
                    out.push_str(&rest[i..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// Texts for sections A to E, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SectionTexts {
    pub drivers: String,
    pub tabular: String,
    pub ontology: String,
    pub knowledge: String,
    pub notes: String,
}

pub fn assemble_prompt(texts: &SectionTexts, budgets: &Budgets) -> Prompt {
    assemble_prompt_with_template(DEFAULT_TEMPLATE, texts, budgets)
}

pub fn assemble_prompt_with_template(template: &str, texts: &SectionTexts, budgets: &Budgets) -> Prompt {
    let inputs = [
        &texts.drivers,
        &texts.tabular,
        &texts.ontology,
        &texts.knowledge,
        &texts.notes,
    ];
    let mut sanitized = false;
    let sections = SECTIONS
        .iter()
        .zip(inputs)
        .zip(budgets.as_array())
        .map(|(((key, name, heading), text), budget)| {
            let budget = budget.max(1);
            let (clean, changed) = sanitize(text);
            sanitized |= changed;
            let body = if clean.trim().is_empty() {
                clip_to_budget(NO_EVIDENCE, budget)
            } else {
                clip_to_budget(clean.trim_end(), budget)
            };
            PromptSection {
                key: *key,
                placeholder: name.to_string(),
                heading: heading.to_string(),
                body,
                budget,
            }
        })
        .collect();
    Prompt {
        template: template.to_string(),
        sections,
        sanitized,
        drivers: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping() {
        let text = "alpha beta gamma delta epsilon zeta eta theta";
        let c = clip_to_budget(text, 30);
        assert!(c.chars().count() <= 30);
        assert!(c.ends_with(TRUNCATION_MARKER));
        assert_eq!(c, "alpha beta gamma …[truncated]");
        assert_eq!(clip_to_budget(text, 100), text);
        assert_eq!(clip_to_budget(text, 5).chars().count(), 5);
    }

    #[test]
    fn sanitizer_reaches_fixed_point() {
        let (s, changed) = sanitize("The SHAP value and attribution COEFFICIENT");
        assert!(changed);
        assert!(!contains_forbidden(&s));
        let (s, changed) = sanitize("SHSHAPAP");
        assert!(changed);
        assert_eq!(s, "");
        assert_eq!(sanitize("plain words"), ("plain words".to_string(), false));
    }

    #[test]
    fn empty_evidence_placeholders() {
        let p = assemble_prompt(&SectionTexts::default(), &Budgets::default());
        assert!(!p.sanitized);
        assert!(p.sections.iter().all(|s| s.body == NO_EVIDENCE));
        let text = p.render();
        assert_eq!(text.matches(NO_EVIDENCE).count(), 5);
        assert!(text.starts_with(p.rules()));
        assert!(!contains_forbidden(&text));
    }

    #[test]
    fn forbidden_input_is_flagged_and_removed() {
        let texts = SectionTexts {
            drivers: "SHAP says BUN matters".into(),
            ..Default::default()
        };
        let p = assemble_prompt(&texts, &Budgets::default());
        assert!(p.sanitized);
        assert!(!contains_forbidden(&p.render()));
        assert_eq!(p.section('A'), Some(" says BUN matters"));
    }

    #[test]
    fn placeholders_in_evidence_are_not_expanded() {
        let texts = SectionTexts {
            drivers: "{{notes}}".into(),
            notes: "secret".into(),
            ..Default::default()
        };
        let text = assemble_prompt(&texts, &Budgets::default()).render();
        assert_eq!(text.matches("secret").count(), 1);
        assert!(text.contains("{{notes}}"));
    }

    #[test]
    fn bundled_template_is_valid() {
        validate_template(DEFAULT_TEMPLATE).unwrap();
        assert!(validate_template("no placeholders").is_err());
    }
}
