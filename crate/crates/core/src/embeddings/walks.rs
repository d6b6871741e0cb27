use rand::Rng;
use rayon::prelude::*;

use super::EmbeddingError;
use crate::ontology::{ConceptGraph, ConceptId};
use crate::util::rng_for;

pub type Walk = Vec<ConceptId>;

/// Node2Vec walk parameters. `p` is the return parameter, `q` the in-out parameter.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct WalkParams {
    pub p: f64,
    pub q: f64,
    pub walk_len: usize,
    pub walks_per_node: usize,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            p: 1.0,
            q: 1.0,
            walk_len: 40,
            walks_per_node: 10,
        }
    }
}

/// Second-order biased random walks over the graph with edges taken as
/// undirected. Walks are ordered by (round, start node); each walk draws from
/// its own RNG stream derived from `(seed, node, round)`.
pub fn generate_walks(graph: &ConceptGraph, params: &WalkParams, seed: u64) -> Result<Vec<Walk>, EmbeddingError> {
    if graph.is_empty() {
        return Err(EmbeddingError::EmptyGraph);
    }
    if !(params.p > 0.0 && params.q > 0.0) {
        return Err(EmbeddingError::InvalidParameter("p and q must be positive".into()));
    }
    if params.walk_len < 2 {
        return Err(EmbeddingError::InvalidParameter("walk_len must be at least 2".into()));
    }
    let (ids, adj) = graph.undirected_adjacency();
    let n = ids.len();
    let jobs: Vec<(usize, usize)> = (0..params.walks_per_node)
        .flat_map(|round| (0..n).map(move |node| (round, node)))
        .collect();
    let walks = jobs
        .par_iter()
        .map(|&(round, start)| {
            let mut rng = rng_for(seed, &[start as u64, round as u64]);
            let path = walk_from(&adj, start, params, &mut rng);
            path.into_iter().map(|i| ids[i].clone()).collect()
        })
        .collect();
    Ok(walks)
}

fn walk_from(adj: &[Vec<usize>], start: usize, params: &WalkParams, rng: &mut impl Rng) -> Vec<usize> {
    let mut walk = Vec::with_capacity(params.walk_len);
    walk.push(start);
    let mut weights = Vec::new();
    while walk.len() < params.walk_len {
        let cur = *walk.last().expect("non-empty walk");
        let nbrs = &adj[cur];
        if nbrs.is_empty() {
            break;
        }
        let next = if walk.len() == 1 {
            nbrs[rng.random_range(0..nbrs.len())]
        } else {
            let prev = walk[walk.len() - 2];
            weights.clear();
            weights.extend(nbrs.iter().map(|&x| {
                if x == prev {
                    1.0 / params.p
                } else if adj[prev].binary_search(&x).is_ok() {
                    1.0
                } else {
                    1.0 / params.q
                }
            }));
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = nbrs[nbrs.len() - 1];
            for (w, &x) in weights.iter().zip(nbrs) {
                if u < *w {
                    pick = x;
                    break;
                }
                u -= w;
            }
            pick
        };
        walk.push(next);
    }
    walk
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn graph(concepts: &[&str], edges: &[(&str, &str)]) -> ConceptGraph {
        let c: BTreeMap<ConceptId, String> = concepts.iter().map(|c| (ConceptId::from(*c), c.to_string())).collect();
        ConceptGraph::from_parts(c, edges.iter().map(|(a, b)| (ConceptId::from(*a), ConceptId::from(*b)))).unwrap()
    }

    fn params(walk_len: usize, walks_per_node: usize) -> WalkParams {
        WalkParams {
            walk_len,
            walks_per_node,
            ..WalkParams::default()
        }
    }

    #[test]
    fn path_graph_has_forced_walks() {
        let g = graph(&["A", "R"], &[("A", "R")]);
        let walks = generate_walks(&g, &params(2, 1), 3).unwrap();
        let as_str: Vec<Vec<&str>> = walks.iter().map(|w| w.iter().map(|c| c.as_str()).collect()).collect();
        assert_eq!(as_str, vec![vec!["A", "R"], vec!["R", "A"]]);
    }

    #[test]
    fn isolated_node_walk_is_singleton() {
        let g = graph(&["A", "R", "Z"], &[("A", "R")]);
        let walks = generate_walks(&g, &params(5, 2), 0).unwrap();
        assert_eq!(walks.len(), 6);
        let z: Vec<&Walk> = walks.iter().filter(|w| w[0].as_str() == "Z").collect();
        assert!(z.iter().all(|w| w.len() == 1));
        assert!(walks.iter().filter(|w| w[0].as_str() != "Z").all(|w| w.len() == 5));
    }

    #[test]
    fn seeded_walks_reproduce() {
        let g = crate::ontology::builtin_toy_ontology();
        let a = generate_walks(&g, &params(10, 2), 42).unwrap();
        let b = generate_walks(&g, &params(10, 2), 42).unwrap();
        let c = generate_walks(&g, &params(10, 2), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), g.len() * 2);
    }

    #[test]
    fn walks_follow_edges() {
        let g = crate::ontology::builtin_toy_ontology();
        let walks = generate_walks(
            &g,
            &WalkParams {
                p: 0.5,
                q: 2.0,
                ..params(12, 1)
            },
            9,
        )
        .unwrap();
        for w in &walks {
            for pair in w.windows(2) {
                let linked =
                    g.parents_of(&pair[0]).any(|p| *p == pair[1]) || g.children_of(&pair[0]).any(|c| *c == pair[1]);
                assert!(linked, "{:?} not adjacent", pair);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = graph(&["A"], &[]);
        assert!(generate_walks(&g, &params(1, 1), 0).is_err());
        assert!(generate_walks(&g, &WalkParams { p: 0.0, ..params(3, 1) }, 0).is_err());
        let empty = graph(&[], &[]);
        assert_eq!(
            generate_walks(&empty, &params(3, 1), 0),
            Err(EmbeddingError::EmptyGraph)
        );
    }
}
