//! Node2Vec walks, skip-gram training, nearest neighbours and TF-IDF pooling
//! of one admission's codes.
//!
//! cargo run --release --example embed_and_pool

use neuron::embeddings::{
    compute_idf, cosine, generate_walks, pool_admission, train_skipgram, SkipGramParams, WalkParams,
};
use neuron::ontology::{builtin_toy_ontology, ConceptId};

fn main() {
    let graph = builtin_toy_ontology();
    let seed = 7;
    let walks = generate_walks(&graph, &WalkParams::default(), seed).expect("walks");
    let head: Vec<&str> = walks[0].iter().take(6).map(|c| c.as_str()).collect();
    println!("{} walks, first: {}", walks.len(), head.join(" -> "));
    let emb = train_skipgram(&walks, &SkipGramParams::default(), seed).expect("training");
    println!("{} vectors of dimension {}", emb.len(), emb.dim);

    let probe = graph
        .ids()
        .find(|id| graph.children_of(id).next().is_none())
        .expect("leaf")
        .clone();
    let v = emb.get(&probe).expect("probe vector").to_vec();
    let mut sims: Vec<(f64, &ConceptId)> = graph
        .ids()
        .filter(|id| **id != probe)
        .filter_map(|id| emb.get(id).map(|u| (cosine(&v, u), id)))
        .collect();
    sims.sort_by(|a, b| b.0.total_cmp(&a.0));
    println!("\nnearest to {} ({}):", probe, graph.term(&probe).unwrap_or("?"));
    for (s, id) in sims.iter().take(5) {
        println!("  {s:+.3}  {}", graph.term(id).unwrap_or("?"));
    }

    let admissions: Vec<Vec<ConceptId>> = graph
        .ids()
        .collect::<Vec<_>>()
        .chunks(3)
        .map(|c| c.iter().map(|id| (*id).clone()).collect())
        .collect();
    let weights = compute_idf(admissions.iter().map(Vec::as_slice)).expect("idf");
    let pooled = pool_admission(&admissions[1], &emb, &weights);
    let codes: Vec<&str> = admissions[1].iter().map(|c| c.as_str()).collect();
    println!(
        "\npooled vector for [{}]: first 4 dims {:?}",
        codes.join(", "),
        &pooled[..4]
    );
    println!(
        "codeless admission pools to zeros: {}",
        pool_admission(&[], &emb, &weights).iter().all(|x| *x == 0.0)
    );
}
