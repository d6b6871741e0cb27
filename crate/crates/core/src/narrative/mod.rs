//! Retrieval-grounded narrative assembly: knowledge-base thresholds, a cosine
//! index over ontology and note documents, a budgeted and sanitized prompt,
//! LLM clients, and mention/claim extraction from the generated text.

mod claims;
mod client;
mod index;
mod kb;
mod lexicon;
mod prompt;
mod render;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use claims::{direction_in, extract_claims, first_number, numbers, segments, status_in, Claim, ClaimedStatus};
pub use client::{chat_completion, parse_chat_response, ChatError, HttpClient, JsonlLog, LlmClient, StubClient};
pub use index::{cosine, index_documents, tokenize, Embedder, HashEmbedder, IndexEntry, Retrieved, VectorIndex};
pub use kb::{
    classify_feature_status, Classification, Comparator, Deviation, KbEntry, KnowledgeBase, RiskDirection, Severity,
    Status, Threshold,
};
pub use lexicon::{at_word_boundary, contains_phrase, extract_feature_mentions, find_phrase, Lexicon, Mention};
pub use prompt::{
    assemble_prompt, assemble_prompt_with_template, clip_to_budget, contains_forbidden, sanitize, validate_template,
    Budgets, DriverRef, Prompt, PromptSection, SectionTexts, DEFAULT_TEMPLATE, FORBIDDEN_TOKENS, INTEGRATION_HEADING,
    MECHANICS_VOCABULARY, NO_EVIDENCE, SECTIONS, TRUNCATION_MARKER,
};
pub use render::{
    build_driver_section, build_evidence_section, build_knowledge_section, build_tabular_section, direction_phrase,
};

use crate::attribution::{DriverList, GroupKind};
use crate::cohort::{AdmissionRecord, Feature};
use crate::document::Document;
use crate::ontology::{slice_documents, ConceptGraph, ConceptId};

#[derive(Debug, Error, PartialEq)]
pub enum NarrativeError {
    #[error("feature {0} is not in the knowledge base")]
    UnknownFeature(String),
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("embedder failed on {0}")]
    EmbedderFailure(String),
    #[error("duplicate document id {0}")]
    DuplicateId(String),
    #[error("LLM request timed out after {retries} retries")]
    ClientTimeout { retries: u32 },
    #[error("LLM transport error: {0}")]
    Transport(String),
    #[error("malformed LLM response: {0}")]
    MalformedResponse(String),
    #[error("narrative has no '{heading}' section", heading = INTEGRATION_HEADING)]
    SectionParseFailure { raw: String },
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Io(String),
}

impl NarrativeError {
    /// True for failures of the remote model rather than local data.
    pub fn is_external(&self) -> bool {
        matches!(
            self,
            NarrativeError::ClientTimeout { .. } | NarrativeError::Transport(_) | NarrativeError::MalformedResponse(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeBundle {
    pub raw: String,
    /// Keys "A".."E" and "integration".
    pub sections: BTreeMap<String, String>,
    pub mention_vector: Vec<u8>,
    pub driver_tokens_covered: BTreeSet<String>,
}

impl NarrativeBundle {
    /// Section A if the model kept it, otherwise the whole text.
    pub fn driver_section(&self) -> &str {
        self.sections.get("A").map_or(self.raw.as_str(), String::as_str)
    }

    pub fn mentioned_keys(&self) -> BTreeSet<String> {
        mention_keys(&self.mention_vector)
    }
}

/// Feature keys whose bit is set.
pub fn mention_keys(v: &[u8]) -> BTreeSet<String> {
    crate::cohort::FEATURES
        .iter()
        .zip(v)
        .filter(|(_, b)| **b == 1)
        .map(|(f, _)| f.key().to_string())
        .collect()
}

fn heading_key(line: &str) -> Option<String> {
    let t = line.trim().trim_start_matches(['#', '*', ' ']);
    if t.to_ascii_lowercase()
        .starts_with(&INTEGRATION_HEADING.to_ascii_lowercase())
    {
        return Some("integration".into());
    }
    let mut cs = t.chars();
    match (cs.next(), cs.next(), cs.next()) {
        (Some(k @ 'A'..='E'), Some('.' | ')'), Some(' ')) => Some(k.to_string()),
        _ => None,
    }
}

/// Split generated text at section headings. The integration section is
/// required.
pub fn parse_sections(raw: &str) -> Result<BTreeMap<String, String>, NarrativeError> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<String> = None;
    let mut buf: Vec<&str> = Vec::new();
    let flush = |key: &Option<String>, buf: &mut Vec<&str>, out: &mut BTreeMap<String, String>| {
        if let Some(k) = key {
            out.entry(k.clone())
                .or_insert_with(|| buf.join("\n").trim().to_string());
        }
        buf.clear();
    };
    for line in raw.lines() {
        match heading_key(line) {
            Some(k) => {
                flush(&current, &mut buf, &mut out);
                current = Some(k);
            }
            None => buf.push(line),
        }
    }
    flush(&current, &mut buf, &mut out);
    if !out.contains_key("integration") {
        return Err(NarrativeError::SectionParseFailure { raw: raw.to_string() });
    }
    Ok(out)
}

/// Tokens of drivers named in the text: tabular drivers by lexicon, the
/// others by display name.
pub fn covered_tokens(text: &str, drivers: &[DriverRef], lexicon: &Lexicon) -> BTreeSet<String> {
    let mentions = extract_feature_mentions(text, lexicon);
    drivers
        .iter()
        .filter(|d| match Feature::from_key(&d.key) {
            Some(f) => mentions[f.index()] == 1,
            None => contains_phrase(text, &d.name),
        })
        .map(|d| d.token.clone())
        .collect()
}

pub fn generate_narrative(
    client: &dyn LlmClient,
    prompt: &Prompt,
    lexicon: &Lexicon,
    seed: u64,
    log: Option<&JsonlLog>,
) -> Result<NarrativeBundle, NarrativeError> {
    if let Some(l) = log {
        l.append(json!({"kind": "request", "client": client.name(), "seed": seed, "prompt": prompt.render()}))?;
    }
    let result = client.complete(prompt, seed);
    if let Some(l) = log {
        let entry = match &result {
            Ok(text) => json!({"kind": "response", "client": client.name(), "seed": seed, "text": text}),
            Err(e) => json!({"kind": "error", "client": client.name(), "seed": seed, "error": e.to_string()}),
        };
        l.append(entry)?;
    }
    let raw = result?;
    let sections = parse_sections(&raw)?;
    Ok(NarrativeBundle {
        mention_vector: extract_feature_mentions(&raw, lexicon),
        driver_tokens_covered: covered_tokens(&raw, &prompt.drivers, lexicon),
        sections,
        raw,
    })
}

/// Retrieval corpus: every concept plus one document per stay with notes.
pub fn build_corpus(graph: &ConceptGraph, records: &[AdmissionRecord]) -> Vec<Document> {
    let all: BTreeSet<ConceptId> = graph.ids().cloned().collect();
    let mut docs = slice_documents(graph, &all);
    for r in records {
        if let Some(n) = r.notes.as_deref().filter(|n| !n.trim().is_empty()) {
            docs.push(
                Document::new(note_doc_id(&r.stay_id), n)
                    .with_meta("kind", "note")
                    .with_meta("stay_id", r.stay_id.as_str()),
            );
        }
    }
    docs
}

pub fn note_doc_id(stay_id: &str) -> String {
    format!("note:{stay_id}")
}

/// Concept documents a stay may see: its codes and their ancestors.
pub fn concept_allow_list(record: &AdmissionRecord, graph: &ConceptGraph) -> BTreeSet<String> {
    let mut ids: BTreeSet<ConceptId> = BTreeSet::new();
    for c in record.codes.iter().filter(|c| graph.contains(c)) {
        ids.insert(c.clone());
        ids.extend(graph.ancestors(c));
    }
    ids.iter().map(|id| format!("concept:{id}")).collect()
}

/// Everything the prompt builder needs besides the stay itself.
pub struct NarrativeContext<'a> {
    pub graph: &'a ConceptGraph,
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn Embedder,
    pub kb: &'a KnowledgeBase,
    pub budgets: Budgets,
    pub retrieve_k: usize,
    pub template: &'a str,
}

/// Render sections A to E for one stay and assemble the prompt.
pub fn build_prompt(
    ctx: &NarrativeContext<'_>,
    record: &AdmissionRecord,
    drivers: &DriverList,
) -> Result<Prompt, NarrativeError> {
    let query: Vec<&str> = drivers.drivers.iter().map(|d| d.name.as_str()).collect();
    let query = query.join(" ");
    let concepts = concept_allow_list(record, ctx.graph);
    let onto_hits = ctx.index.retrieve(ctx.embedder, &query, &concepts, ctx.retrieve_k)?;
    let notes_allow: BTreeSet<String> = [note_doc_id(&record.stay_id)].into();
    let note_hits = ctx.index.retrieve(ctx.embedder, &query, &notes_allow, 1)?;
    let texts = SectionTexts {
        drivers: build_driver_section(drivers, &record.imputed, ctx.kb),
        tabular: build_tabular_section(record, ctx.kb),
        ontology: build_evidence_section(&onto_hits),
        knowledge: build_knowledge_section(drivers, ctx.kb),
        notes: build_evidence_section(&note_hits),
    };
    let mut prompt = assemble_prompt_with_template(ctx.template, &texts, &ctx.budgets);
    prompt.drivers = driver_refs(drivers);
    Ok(prompt)
}

pub fn driver_refs(drivers: &DriverList) -> Vec<DriverRef> {
    drivers
        .drivers
        .iter()
        .zip(&drivers.tokens)
        .map(|(d, t)| DriverRef {
            token: t.clone(),
            key: d.key.clone(),
            name: d.name.clone(),
        })
        .collect()
}

/// Tabular drivers only.
pub fn tabular_drivers(drivers: &DriverList) -> DriverList {
    let (d, t): (Vec<_>, Vec<_>) = drivers
        .drivers
        .iter()
        .zip(&drivers.tokens)
        .filter(|(d, _)| d.group == GroupKind::Tabular)
        .map(|(d, t)| (d.clone(), t.clone()))
        .unzip();
    DriverList { drivers: d, tokens: t }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{rank_drivers, Direction, GroupEntry, GroupedAttribution};
    use crate::cohort::FEATURES;

    fn drivers() -> DriverList {
        let mk = |f: Feature, v: f64, phi: f64| GroupEntry {
            group: GroupKind::Tabular,
            key: f.key().into(),
            name: f.label().into(),
            value: Some(v),
            phi,
            direction: Direction::of(phi),
            column: f.index(),
        };
        let mut entries = vec![mk(Feature::BunMin, 50.0, 0.5), mk(Feature::Spo2Min, 88.0, 0.3)];
        entries.push(GroupEntry {
            group: GroupKind::Ontology,
            key: "onto_1110000".into(),
            name: "Heart failure".into(),
            value: Some(2.0),
            phi: 0.2,
            direction: Direction::RiskUp,
            column: 40,
        });
        rank_drivers(
            &GroupedAttribution {
                phi0: 0.0,
                fx: 1.0,
                entries,
            },
            3,
        )
    }

    fn prompt() -> Prompt {
        let kb = KnowledgeBase::builtin();
        let d = drivers();
        let texts = SectionTexts {
            drivers: build_driver_section(&d, &BTreeSet::new(), &kb),
            ..Default::default()
        };
        let mut p = assemble_prompt(&texts, &Budgets::default());
        p.drivers = driver_refs(&d);
        p
    }

    #[test]
    fn stub_marks_exactly_the_drivers() {
        let lex = Lexicon::builtin();
        let b = generate_narrative(&StubClient, &prompt(), &lex, 7, None).unwrap();
        let mut expect = vec![0u8; FEATURES.len()];
        expect[Feature::BunMin.index()] = 1;
        expect[Feature::Spo2Min.index()] = 1;
        assert_eq!(b.mention_vector, expect);
        assert_eq!(b.driver_tokens_covered.len(), 3);
        assert!(b.sections.contains_key("A") && b.sections.contains_key("E"));
        assert_eq!(b, generate_narrative(&StubClient, &prompt(), &lex, 8, None).unwrap());
    }

    #[test]
    fn missing_integration_section() {
        let raw = "A. MODEL DRIVERS\n- BUN\n";
        assert_eq!(
            parse_sections(raw),
            Err(NarrativeError::SectionParseFailure { raw: raw.into() })
        );
        let s = parse_sections("intro\n**Integrated interpretation**\nall good").unwrap();
        assert_eq!(s["integration"], "all good");
    }

    #[test]
    fn logging_writes_request_and_response() {
        let dir = tempfile::tempdir().unwrap();
        let log = JsonlLog::new(dir.path().join("llm.jsonl"));
        generate_narrative(&StubClient, &prompt(), &Lexicon::builtin(), 1, Some(&log)).unwrap();
        let text = std::fs::read_to_string(log.path()).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn prompt_for_a_stay_stays_inside_its_allow_list() {
        let graph = crate::ontology::builtin_toy_ontology();
        let mut r1 = AdmissionRecord {
            schema_version: 1,
            stay_id: "S1".into(),
            subject_id: "P1".into(),
            features: FEATURES.iter().map(|f| (*f, Some(1.0))).collect(),
            codes: vec!["1110000".into()],
            label: Some(1),
            notes: Some("Seen by the cardiology consult team.".into()),
            imputed: BTreeSet::new(),
        };
        let mut r2 = r1.clone();
        r2.stay_id = "S2".into();
        r2.notes = Some("Other stay note.".into());
        r1.codes.push("unknown".into());
        let corpus = build_corpus(&graph, &[r1.clone(), r2]);
        let emb = HashEmbedder::default();
        let index = index_documents(&corpus, &emb).unwrap();
        let kb = KnowledgeBase::builtin();
        let ctx = NarrativeContext {
            graph: &graph,
            index: &index,
            embedder: &emb,
            kb: &kb,
            budgets: Budgets::default(),
            retrieve_k: 50,
            template: DEFAULT_TEMPLATE,
        };
        let p = build_prompt(&ctx, &r1, &drivers()).unwrap();
        let notes = p.section('E').unwrap();
        assert!(notes.contains("cardiology") && !notes.contains("Other stay"));
        let allow = concept_allow_list(&r1, &graph);
        let onto = p.section('C').unwrap();
        for e in &index.entries {
            if e.doc.metadata.get("kind").map(String::as_str) == Some("concept") && onto.contains(&e.doc.text) {
                assert!(allow.contains(&e.doc.doc_id), "{}", e.doc.doc_id);
            }
        }
        assert!(!contains_forbidden(&p.render()));
    }
}
