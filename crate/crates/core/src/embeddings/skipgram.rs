use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{EmbeddingError, EmbeddingTable, Walk, EMBEDDING_DIM};
use crate::ontology::ConceptId;
use crate::util::{rng_for, sigmoid};

/// How the skip-gram passes are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum TrainingMode {
    /// One thread, bit-reproducible for a fixed seed.
    #[default]
    Deterministic,
    /// Walks split into shards trained on copies of the parameters, which are
    /// averaged after every epoch.
    Sharded { shards: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SkipGramParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Starting learning rate, decayed linearly towards `lr * 1e-4`.
    pub lr: f64,
    pub unit_norm: bool,
    pub mode: TrainingMode,
}

impl Default for SkipGramParams {
    fn default() -> Self {
        Self {
            dim: EMBEDDING_DIM,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            unit_norm: false,
            mode: TrainingMode::Deterministic,
        }
    }
}

struct Weights {
    input: Vec<f64>,
    output: Vec<f64>,
}

/// Skip-gram with negative sampling over the walk corpus.
pub fn train_skipgram(walks: &[Walk], params: &SkipGramParams, seed: u64) -> Result<EmbeddingTable, EmbeddingError> {
    if params.dim == 0 {
        return Err(EmbeddingError::InvalidParameter("dim must be at least 1".into()));
    }
    let mut vocab: BTreeMap<&ConceptId, usize> = BTreeMap::new();
    for w in walks {
        for c in w {
            *vocab.entry(c).or_default() += 1;
        }
    }
    if vocab.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let words: Vec<&ConceptId> = vocab.keys().copied().collect();
    let index: BTreeMap<&ConceptId, usize> = words.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let corpus: Vec<Vec<usize>> = walks.iter().map(|w| w.iter().map(|c| index[c]).collect()).collect();

    // unigram^0.75 cumulative distribution for negatives
    let mut cumulative = Vec::with_capacity(words.len());
    let mut acc = 0.0;
    for c in &words {
        acc += (vocab[c] as f64).powf(0.75);
        cumulative.push(acc);
    }

    let dim = params.dim;
    let mut init_rng = rng_for(seed, &[0x5EED]);
    let mut weights = Weights {
        input: (0..words.len() * dim)
            .map(|_| (init_rng.random::<f64>() - 0.5) / dim as f64)
            .collect(),
        output: vec![0.0; words.len() * dim],
    };

    let total_tokens: usize = corpus.iter().map(Vec::len).sum();
    let total_steps = (total_tokens * params.epochs).max(1) as f64;
    let ctx = Ctx {
        params,
        cumulative: &cumulative,
        total_steps,
    };

    match params.mode {
        TrainingMode::Deterministic => {
            let mut rng = rng_for(seed, &[0x7A1]);
            let mut step = 0usize;
            for _ in 0..params.epochs {
                for walk in &corpus {
                    ctx.train_walk(walk, &mut weights, &mut rng, &mut step);
                }
            }
        }
        TrainingMode::Sharded { shards } => {
            let shards = shards.max(1);
            let chunk = corpus.len().div_ceil(shards).max(1);
            for epoch in 0..params.epochs {
                let parts: Vec<Weights> = corpus
                    .par_chunks(chunk)
                    .enumerate()
                    .map(|(s, walks)| {
                        let mut local = Weights {
                            input: weights.input.clone(),
                            output: weights.output.clone(),
                        };
                        let mut rng = rng_for(seed, &[0x7A1, epoch as u64, s as u64]);
                        // every shard sees the epoch's share of the schedule
                        let mut step = epoch * total_tokens;
                        for w in walks {
                            ctx.train_walk(w, &mut local, &mut rng, &mut step);
                        }
                        local
                    })
                    .collect();
                let k = parts.len() as f64;
                weights.input.iter_mut().for_each(|x| *x = 0.0);
                weights.output.iter_mut().for_each(|x| *x = 0.0);
                for p in &parts {
                    for (a, b) in weights.input.iter_mut().zip(&p.input) {
                        *a += b / k;
                    }
                    for (a, b) in weights.output.iter_mut().zip(&p.output) {
                        *a += b / k;
                    }
                }
            }
        }
    }

    let mut table = EmbeddingTable::new(dim);
    for (i, c) in words.iter().enumerate() {
        table.insert((*c).clone(), weights.input[i * dim..(i + 1) * dim].to_vec())?;
    }
    if params.unit_norm {
        table.normalize();
    }
    Ok(table)
}

struct Ctx<'a> {
    params: &'a SkipGramParams,
    cumulative: &'a [f64],
    total_steps: f64,
}

impl Ctx<'_> {
    fn sample_negative(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }

    fn train_walk(&self, walk: &[usize], w: &mut Weights, rng: &mut ChaCha8Rng, step: &mut usize) {
        let dim = self.params.dim;
        let mut grad = vec![0.0; dim];
        for (i, &center) in walk.iter().enumerate() {
            let lr = self.params.lr * (1.0 - *step as f64 / self.total_steps).max(1e-4);
            *step += 1;
            let window = self.params.window.max(1);
            let span = window - rng.random_range(0..window);
            let lo = i.saturating_sub(span);
            let hi = (i + span).min(walk.len() - 1);
            for (j, &context) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                if j == i {
                    continue;
                }
                grad.iter_mut().for_each(|g| *g = 0.0);
                let input = &mut w.input[center * dim..(center + 1) * dim];
                for n in 0..=self.params.negatives {
                    let (target, label) = if n == 0 {
                        (context, 1.0)
                    } else {
                        let t = self.sample_negative(rng);
                        if t == context {
                            continue;
                        }
                        (t, 0.0)
                    };
                    let out = &mut w.output[target * dim..(target + 1) * dim];
                    let dot: f64 = input.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                    let g = (label - sigmoid(dot)) * lr;
                    for k in 0..dim {
                        grad[k] += g * out[k];
                        out[k] += g * input[k];
                    }
                }
                for (x, g) in input.iter_mut().zip(&grad) {
                    *x += g;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{cosine, generate_walks, WalkParams};
    use crate::ontology::ConceptGraph;

    fn two_communities() -> ConceptGraph {
        // two 6-cliques (as DAGs ordered by id) joined through a single bridge edge
        let mut concepts = BTreeMap::new();
        let mut edges = Vec::new();
        for side in ["a", "b"] {
            for i in 0..6 {
                concepts.insert(ConceptId::new(format!("{side}{i}")), format!("{side}{i}"));
                for j in 0..i {
                    edges.push((
                        ConceptId::new(format!("{side}{i}")),
                        ConceptId::new(format!("{side}{j}")),
                    ));
                }
            }
        }
        edges.push((ConceptId::new("b0"), ConceptId::new("a0")));
        ConceptGraph::from_parts(concepts, edges).unwrap()
    }

    fn small_params() -> SkipGramParams {
        SkipGramParams {
            dim: 16,
            epochs: 3,
            ..SkipGramParams::default()
        }
    }

    #[test]
    fn communities_separate() {
        let g = two_communities();
        let walks = generate_walks(
            &g,
            &WalkParams {
                walk_len: 20,
                walks_per_node: 20,
                ..WalkParams::default()
            },
            1,
        )
        .unwrap();
        let emb = train_skipgram(&walks, &small_params(), 1).unwrap();
        let ids: Vec<&ConceptId> = emb.vectors.keys().collect();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for (i, a) in ids.iter().enumerate() {
            for b in ids.iter().skip(i + 1) {
                let c = cosine(emb.get(a).unwrap(), emb.get(b).unwrap());
                if a.as_str()[..1] == b.as_str()[..1] {
                    intra.push(c);
                } else {
                    inter.push(c);
                }
            }
        }
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(m(&intra) > m(&inter), "intra {} vs inter {}", m(&intra), m(&inter));
    }

    #[test]
    fn shape_and_determinism() {
        let g = crate::ontology::builtin_toy_ontology();
        let walks = generate_walks(
            &g,
            &WalkParams {
                walk_len: 10,
                walks_per_node: 2,
                ..WalkParams::default()
            },
            5,
        )
        .unwrap();
        let p = SkipGramParams {
            epochs: 1,
            ..SkipGramParams::default()
        };
        let a = train_skipgram(&walks, &p, 11).unwrap();
        let b = train_skipgram(&walks, &p, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), g.len());
        assert!(a
            .vectors
            .values()
            .all(|v| v.len() == 32 && v.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let walks = vec![vec![ConceptId::from("x"), ConceptId::from("y")]];
        let p0 = SkipGramParams {
            epochs: 0,
            dim: 4,
            ..SkipGramParams::default()
        };
        let a = train_skipgram(&walks, &p0, 3).unwrap();
        let b = train_skipgram(&[vec![ConceptId::from("y"), ConceptId::from("x")]], &p0, 3).unwrap();
        // initialisation depends only on seed and vocabulary
        assert_eq!(a, b);
        let bound = 0.5 / 4.0;
        assert!(a.vectors.values().flatten().all(|x| x.abs() <= bound));
        let trained = train_skipgram(&walks, &SkipGramParams { epochs: 1, ..p0 }, 3).unwrap();
        assert_ne!(a, trained);
    }

    #[test]
    fn sharded_mode_runs_and_unit_norm() {
        let g = crate::ontology::builtin_toy_ontology();
        let walks = generate_walks(
            &g,
            &WalkParams {
                walk_len: 8,
                walks_per_node: 2,
                ..WalkParams::default()
            },
            5,
        )
        .unwrap();
        let p = SkipGramParams {
            epochs: 2,
            unit_norm: true,
            mode: TrainingMode::Sharded { shards: 3 },
            ..SkipGramParams::default()
        };
        let t = train_skipgram(&walks, &p, 2).unwrap();
        for v in t.vectors.values() {
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert_eq!(
            train_skipgram(&[], &SkipGramParams::default(), 0),
            Err(EmbeddingError::EmptyCorpus)
        );
        assert_eq!(
            train_skipgram(&[vec![]], &SkipGramParams::default(), 0),
            Err(EmbeddingError::EmptyCorpus)
        );
    }
}
