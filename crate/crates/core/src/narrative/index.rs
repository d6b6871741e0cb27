use std::collections::{BTreeSet, HashSet};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::NarrativeError;
use crate::document::Document;
use crate::util::rng_for;

/// Text to fixed-length vector.
pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, String>;
}

/// Bag of hashed tokens, each projected to a seeded Gaussian vector.
/// No model download; identical text always gives the identical vector.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 64, seed: 0 }
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, String> {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            let mut rng = rng_for(self.seed, &[fnv1a(&tok)]);
            for x in v.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *x += g;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub doc: Document,
    pub embedding: Vec<f64>,
}

/// Exact cosine search over an immutable set of documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    pub dim: usize,
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub doc: Document,
    pub score: f64,
}

pub fn index_documents(docs: &[Document], embedder: &dyn Embedder) -> Result<VectorIndex, NarrativeError> {
    if docs.is_empty() {
        return Err(NarrativeError::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(docs.len());
    for d in docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(NarrativeError::DuplicateId(d.doc_id.clone()));
        }
        let embedding = embedder
            .embed(&d.text)
            .map_err(|e| NarrativeError::EmbedderFailure(format!("{}: {e}", d.doc_id)))?;
        if embedding.len() != embedder.dim() || embedding.iter().any(|x| !x.is_finite()) {
            return Err(NarrativeError::EmbedderFailure(d.doc_id.clone()));
        }
        entries.push(IndexEntry {
            doc: d.clone(),
            embedding,
        });
    }
    Ok(VectorIndex {
        dim: embedder.dim(),
        entries,
    })
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Top-`k` by cosine among documents whose id is in `allow_list`; equal
    /// scores are ordered by doc id.
    pub fn retrieve(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        allow_list: &BTreeSet<String>,
        k: usize,
    ) -> Result<Vec<Retrieved>, NarrativeError> {
        let q = embedder
            .embed(query)
            .map_err(|e| NarrativeError::EmbedderFailure(format!("query: {e}")))?;
        let mut hits: Vec<Retrieved> = self
            .entries
            .iter()
            .filter(|e| allow_list.contains(&e.doc.doc_id))
            .map(|e| Retrieved {
                doc: e.doc.clone(),
                score: cosine(&q, &e.embedding),
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc.doc_id.cmp(&b.doc.doc_id))
        });
        hits.truncate(k.max(1));
        Ok(hits)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NarrativeError> {
        let s = serde_json::to_string(self).map_err(|e| NarrativeError::Format(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| NarrativeError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NarrativeError> {
        let s = std::fs::read_to_string(path).map_err(|e| NarrativeError::Io(format!("{}: {e}", path.display())))?;
        let idx: VectorIndex =
            serde_json::from_str(&s).map_err(|e| NarrativeError::Format(format!("index snapshot: {e}")))?;
        if idx.entries.iter().any(|e| e.embedding.len() != idx.dim) {
            return Err(NarrativeError::Format(
                "index snapshot: embedding length differs from dim".into(),
            ));
        }
        Ok(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs() -> Vec<Document> {
        vec![
            Document::new("b", "acute kidney injury with oliguria"),
            Document::new("a", "congestive heart failure"),
            Document::new("c", "pulmonary edema and congestion"),
        ]
    }

    fn all(idx: &VectorIndex) -> BTreeSet<String> {
        idx.entries.iter().map(|e| e.doc.doc_id.clone()).collect()
    }

    #[test]
    fn build_and_query() {
        let emb = HashEmbedder::default();
        let idx = index_documents(&docs(), &emb).unwrap();
        assert_eq!(idx.len(), 3);
        let hits = idx.retrieve(&emb, "congestive heart failure", &all(&idx), 1).unwrap();
        assert_eq!(hits[0].doc.doc_id, "a");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
        assert!(idx.retrieve(&emb, "heart", &BTreeSet::new(), 3).unwrap().is_empty());
        assert_eq!(idx.retrieve(&emb, "heart", &all(&idx), 10).unwrap().len(), 3);
    }

    #[test]
    fn errors() {
        let emb = HashEmbedder::default();
        assert_eq!(index_documents(&[], &emb), Err(NarrativeError::EmptyCorpus));
        let mut d = docs();
        d.push(Document::new("a", "dup"));
        assert_eq!(index_documents(&d, &emb), Err(NarrativeError::DuplicateId("a".into())));
    }

    #[test]
    fn ties_break_on_doc_id() {
        let emb = HashEmbedder::default();
        let d = vec![Document::new("z", "same text"), Document::new("m", "same text")];
        let idx = index_documents(&d, &emb).unwrap();
        let hits = idx.retrieve(&emb, "other words", &all(&idx), 2).unwrap();
        assert_eq!(hits[0].doc.doc_id, "m");
        assert_eq!(hits[0].score, hits[1].score);
    }

    #[test]
    fn snapshot_roundtrip() {
        let emb = HashEmbedder::default();
        let idx = index_documents(&docs(), &emb).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idx.json");
        idx.save(&p).unwrap();
        assert_eq!(VectorIndex::load(&p).unwrap(), idx);
    }
}
