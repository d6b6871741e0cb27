use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingTable};
use crate::ontology::ConceptId;

/// Smoothed inverse document frequencies, one admission per document:
/// `idf(c) = ln((1 + N) / (1 + df(c))) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub idf: BTreeMap<ConceptId, f64>,
    pub n_admissions: usize,
}

impl WeightTable {
    pub fn get(&self, id: &ConceptId) -> Option<f64> {
        self.idf.get(id).copied()
    }
}

pub fn compute_idf<'a, I>(admissions: I) -> Result<WeightTable, EmbeddingError>
where
    I: IntoIterator<Item = &'a [ConceptId]>,
{
    let mut df: BTreeMap<ConceptId, usize> = BTreeMap::new();
    let mut n = 0usize;
    for codes in admissions {
        n += 1;
        let mut seen: Vec<&ConceptId> = codes.iter().collect();
        seen.sort();
        seen.dedup();
        for c in seen {
            *df.entry(c.clone()).or_default() += 1;
        }
    }
    if n == 0 {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let idf = df
        .into_iter()
        .map(|(c, d)| (c, ((1.0 + n as f64) / (1.0 + d as f64)).ln() + 1.0))
        .collect();
    Ok(WeightTable { idf, n_admissions: n })
}

/// TF-IDF weighted mean of the embeddings of `codes`. Codes without an
/// embedding or without an IDF weight contribute nothing; if nothing
/// contributes the result is the zero vector.
pub fn pool_admission(codes: &[ConceptId], emb: &EmbeddingTable, weights: &WeightTable) -> Vec<f64> {
    let mut tf: BTreeMap<&ConceptId, usize> = BTreeMap::new();
    for c in codes {
        *tf.entry(c).or_default() += 1;
    }
    let used: Vec<(&[f64], f64)> = tf
        .into_iter()
        .filter_map(|(c, n)| {
            let v = emb.get(c)?;
            let w = weights.get(c)? * n as f64;
            (w > 0.0).then_some((v, w))
        })
        .collect();
    let mut out = vec![0.0; emb.dim];
    let total: f64 = used.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return out;
    }
    for (v, w) in used {
        let share = w / total;
        for (o, x) in out.iter_mut().zip(v) {
            *o += share * x;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<ConceptId> {
        v.iter().map(|s| ConceptId::from(*s)).collect()
    }

    #[test]
    fn idf_formula() {
        let docs = [ids(&["a", "b"]), ids(&["a"]), ids(&["a", "a"]), ids(&["a"])];
        let w = compute_idf(docs.iter().map(Vec::as_slice)).unwrap();
        assert_eq!(w.n_admissions, 4);
        assert!((w.get(&"a".into()).unwrap() - 1.0).abs() < 1e-15);
        // oracle: ln(5/2) + 1
        assert!((w.get(&"b".into()).unwrap() - 1.916_290_731_874_155).abs() < 1e-12);
        assert_eq!(w.get(&"c".into()), None);
        assert!(compute_idf(std::iter::empty()).is_err());
    }

    fn table() -> (EmbeddingTable, WeightTable) {
        let mut e = EmbeddingTable::new(2);
        e.insert("a".into(), vec![1.0, 0.0]).unwrap();
        e.insert("b".into(), vec![0.0, 3.0]).unwrap();
        e.insert("z".into(), vec![5.0, 5.0]).unwrap();
        let docs = [ids(&["a", "b"]), ids(&["a"]), ids(&["a"])];
        (e, compute_idf(docs.iter().map(Vec::as_slice)).unwrap())
    }

    #[test]
    fn single_code_pools_to_its_vector() {
        let (e, w) = table();
        assert_eq!(pool_admission(&ids(&["b"]), &e, &w), vec![0.0, 3.0]);
        assert_eq!(
            pool_admission(&ids(&["b", "b"]), &e, &w),
            pool_admission(&ids(&["b"]), &e, &w)
        );
    }

    #[test]
    fn empty_or_unweighted_codes_give_zero() {
        let (e, w) = table();
        assert_eq!(pool_admission(&[], &e, &w), vec![0.0, 0.0]);
        // z has an embedding but occurs in no admission
        assert_eq!(pool_admission(&ids(&["z", "unknown"]), &e, &w), vec![0.0, 0.0]);
    }

    #[test]
    fn weighted_mean_value() {
        let (e, w) = table();
        let wa = w.get(&"a".into()).unwrap();
        let wb = w.get(&"b".into()).unwrap();
        let v = pool_admission(&ids(&["a", "b", "a"]), &e, &w);
        let expect = [2.0 * wa / (2.0 * wa + wb), 3.0 * wb / (2.0 * wa + wb)];
        assert!((v[0] - expect[0]).abs() < 1e-12 && (v[1] - expect[1]).abs() < 1e-12);
    }
}
