//! Node2Vec concept embeddings and TF-IDF pooling into one vector per
//! admission.

mod pooling;
mod skipgram;
mod walks;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::ontology::ConceptId;
use crate::util::format_g;

pub use pooling::{compute_idf, pool_admission, WeightTable};
pub use skipgram::{train_skipgram, SkipGramParams, TrainingMode};
pub use walks::{generate_walks, Walk, WalkParams};

/// Default embedding width.
pub const EMBEDDING_DIM: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("graph has no concepts")]
    EmptyGraph,
    #[error("no walks / documents to train on")]
    EmptyCorpus,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("embedding file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Concept vectors of a common width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<ConceptId, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: &ConceptId) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, id: ConceptId, v: Vec<f64>) -> Result<(), EmbeddingError> {
        if v.len() != self.dim {
            return Err(EmbeddingError::InvalidParameter(format!(
                "vector for {id} has length {}, expected {}",
                v.len(),
                self.dim
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::InvalidParameter(format!("non-finite entry for {id}")));
        }
        self.vectors.insert(id, v);
        Ok(())
    }

    pub fn normalize(&mut self) {
        for v in self.vectors.values_mut() {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    /// One line per concept: id followed by `dim` values in `%.8g`, tab separated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, v) in &self.vectors {
            out.push_str(id.as_str());
            for x in v {
                out.push('\t');
                out.push_str(&format_g(*x, 8));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, EmbeddingError> {
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let id = cols
                .next()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| EmbeddingError::Parse {
                    line: i + 1,
                    reason: "missing concept id".into(),
                })?;
            let v = cols
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbeddingError::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(v.len()));
            t.insert(ConceptId::new(id), v).map_err(|e| EmbeddingError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        table.ok_or(EmbeddingError::EmptyCorpus)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        fs::write(path, self.to_tsv()).map_err(|e| EmbeddingError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let text = fs::read_to_string(path).map_err(|e| EmbeddingError::Io(e.to_string()))?;
        Self::from_tsv(&text)
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip_is_stable() {
        let mut t = EmbeddingTable::new(3);
        t.insert("10".into(), vec![0.1, -2.0 / 3.0, 12345.678901]).unwrap();
        t.insert("2".into(), vec![1e-7, 0.0, -1.0]).unwrap();
        let text = t.to_tsv();
        assert!(text.starts_with("2\t1e-07\t0\t-1\n"));
        let back = EmbeddingTable::from_tsv(&text).unwrap();
        assert_eq!(back.to_tsv(), text);
        for (id, v) in &t.vectors {
            for (a, b) in v.iter().zip(back.get(id).unwrap()) {
                assert!((a - b).abs() <= 1e-7 * a.abs().max(1e-30));
            }
        }
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = EmbeddingTable::from_tsv("a\t1\t2\nb\t1\n").unwrap_err();
        assert!(matches!(err, EmbeddingError::Parse { line: 2, .. }));
    }
}
