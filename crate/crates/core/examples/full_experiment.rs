//! Repeated explanation comparison for one stay, written to an output
//! directory with the metric table and manifest.
//!
//! cargo run --release --example full_experiment [out_dir]

use neuron::cohort::FeatureConfig;
use neuron::harness::{
    run_explanation_comparison, write_explanation_outputs, ExperimentConfig, ExplainerChoice, OutputDir,
};

fn main() {
    let out_dir = std::env::args().nth(1).unwrap_or_else(|| "neuron-example-out".into());
    let mut cfg = ExperimentConfig::default();
    cfg.explain.config = FeatureConfig::Tabular;
    cfg.explain.explainer = ExplainerChoice::Exact;
    cfg.explain.runs = 10;
    cfg.out_dir = out_dir.clone().into();

    let out = OutputDir::create(&cfg.out_dir).expect("output dir");
    let outcome = run_explanation_comparison(&cfg, 0, Some(out.llm_log().expect("log"))).expect("comparison");
    write_explanation_outputs(&out, &outcome).expect("write");
    let manifest = out.record_stage(&cfg, "evaluate").expect("manifest");

    println!(
        "stay {} · {} explainer · {} runs",
        outcome.stay_id,
        outcome.explainer,
        outcome.runs.len()
    );
    println!("{:<28} {:>10} {:>10}", "metric", "SHAP", "RAG");
    let keys = [
        "completeness",
        "additivity_gap",
        "infidelity",
        "robustness",
        "mass_coverage",
        "narrative_completeness",
        "ha_overall",
        "stability",
    ];
    for k in keys {
        let cell =
            |r: &neuron::metrics::MetricReport| r.metrics.get(k).map_or("-".to_string(), |s| format!("{:.3}", s.mean));
        println!("{:<28} {:>10} {:>10}", k, cell(&outcome.shap), cell(&outcome.rag));
    }
    println!("\n{} files hashed in {out_dir}/manifest.json", manifest.outputs.len());
}
