//! Generate the synthetic cohort, apply filter → split → impute, and build
//! the three feature matrices.
//!
//! cargo run --release --example cohort_pipeline

use neuron::cohort::{
    assemble_features, generate_cohort, prepare_cohort, CohortSpec, FeatureConfig, FeatureContext, SplitMode, FEATURES,
};
use neuron::embeddings::{compute_idf, generate_walks, train_skipgram, SkipGramParams, WalkParams};
use neuron::ontology::{builtin_toy_ontology, discover_levels};

fn main() {
    let seed = 0;
    let graph = builtin_toy_ontology();
    let levels = discover_levels(&graph).expect("levels");
    let spec = CohortSpec::default();
    let records = generate_cohort(&spec, &graph, seed).expect("cohort");
    let deaths = records.iter().filter(|r| r.label == Some(1)).count();
    println!(
        "{} admissions, mortality {:.3}",
        records.len(),
        deaths as f64 / records.len() as f64
    );

    let prep = prepare_cohort(&records, 0.3, SplitMode::Stay, 0.3, seed).expect("prepare");
    println!(
        "kept {} of {} after the missingness filter; train {} / val {}; subjects overlap: {}",
        prep.n_filtered,
        prep.n_raw,
        prep.train.len(),
        prep.val.len(),
        prep.subjects_overlap()
    );
    println!("\ntraining medians used for imputation:");
    for f in FEATURES.iter().take(6) {
        let n_imp = prep.train.iter().filter(|r| r.imputed.contains(f)).count();
        println!(
            "  {:<18} {:>8.2}  ({n_imp} train rows imputed)",
            f.label(),
            prep.imputer.fill[f]
        );
    }

    let walks = generate_walks(&graph, &WalkParams::default(), seed).expect("walks");
    let emb = train_skipgram(&walks, &SkipGramParams::default(), seed).expect("embeddings");
    let weights = compute_idf(prep.train.iter().map(|r| r.codes.as_slice())).expect("idf");
    let ctx = FeatureContext {
        emb: &emb,
        weights: &weights,
        levels: &levels,
        graph: &graph,
    };
    println!();
    for config in FeatureConfig::ALL {
        let m = assemble_features(&prep.train, config, Some(&ctx)).expect("features");
        println!(
            "{:<14} {} x {}  first columns {:?}",
            config.name(),
            m.n_rows(),
            m.columns.len(),
            &m.columns.names()[..3]
        );
    }
}
