//! Parse the bundled toy hierarchy, find the two anchor levels and tally a
//! stay's codes under them.
//!
//! cargo run --example ontology_levels

use std::collections::BTreeSet;

use neuron::ontology::{builtin_toy_ontology, category_counts, discover_levels, slice_documents, ConceptId};

fn main() {
    let graph = builtin_toy_ontology();
    let root = graph.root().expect("single root");
    println!(
        "{} concepts, {} is-a edges, root {} ({})",
        graph.len(),
        graph.edge_count(),
        root,
        graph.term(&root).unwrap_or("?")
    );

    let levels = discover_levels(&graph).expect("levels");
    println!("\nlevel 1 anchors:");
    for a in &levels.level1 {
        println!("  {a}  {}", graph.term(a).unwrap_or("?"));
    }
    println!("level 2 anchors:");
    for a in &levels.level2 {
        println!("  {a}  {}", graph.term(a).unwrap_or("?"));
    }

    // a few leaf codes plus one unknown id
    let codes: Vec<ConceptId> = graph
        .ids()
        .filter(|id| graph.children_of(id).next().is_none())
        .take(4)
        .cloned()
        .chain([ConceptId::new("999")])
        .collect();
    let counts = category_counts(&graph, &levels, &codes, "demo-stay");
    println!("\ncodes {:?}", codes.iter().map(ConceptId::as_str).collect::<Vec<_>>());
    println!(
        "count vector {:?} (unmapped {})",
        counts.to_vector(&levels),
        counts.unmapped
    );

    let first = &codes[0];
    let mut allow: BTreeSet<ConceptId> = graph.ancestors(first).into_iter().collect();
    allow.insert(first.clone());
    println!("\nconcept documents for {first} and its ancestors:");
    for d in slice_documents(&graph, &allow) {
        println!("  [{}] {}", d.doc_id, d.text);
    }
}
