//! Build the budgeted prompt for one stay, generate a narrative with the
//! offline stub client and score it.
//!
//! cargo run --release --example narrative_stub

use neuron::cohort::FeatureConfig;
use neuron::harness::{build_narrative_resources, explain_once, narrate_once, prepare_focus, ExperimentConfig};
use neuron::metrics::{clinical_plausibility, narrative_completeness, required_items, shap_mass_coverage};
use neuron::narrative::{contains_forbidden, extract_claims, tabular_drivers};

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.explain.config = FeatureConfig::Tabular;
    let case = prepare_focus(&cfg, 0).expect("focus case");
    let res = build_narrative_resources(&cfg, &case.pipeline, None).expect("resources");
    let (_, _, drivers) = explain_once(&case, 5, 1).expect("attribution");
    let (prompt, bundle) = narrate_once(&case, &cfg, &res, &drivers, 1).expect("narrative");

    let rendered = prompt.render();
    println!(
        "prompt: {} chars, sanitized: {}, forbidden tokens left: {}",
        rendered.len(),
        prompt.sanitized,
        contains_forbidden(&rendered)
    );
    println!("----\n{}\n----", bundle.raw);
    println!("mentioned features: {:?}", bundle.mentioned_keys());
    println!("driver tokens covered: {:?}", bundle.driver_tokens_covered);

    let coverage = shap_mass_coverage(&tabular_drivers(&drivers), &bundle.mentioned_keys()).expect("coverage");
    let completeness =
        narrative_completeness(&required_items(&drivers), &bundle.raw, &res.lexicon).expect("completeness");
    let claims = extract_claims(bundle.driver_section(), &res.lexicon);
    let plaus = clinical_plausibility(&claims, &res.kb).expect("plausibility");
    println!(
        "mass coverage {coverage:.3}, completeness {:.3}, plausibility {plaus:.3} over {} claims",
        completeness.score,
        claims.len()
    );
}
