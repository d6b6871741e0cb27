//! Train the three predictors on the three feature configurations for one
//! seed and print the performance table.
//!
//! cargo run --release --example train_predictors [seed]

use neuron::cohort::FeatureConfig;
use neuron::harness::{run_performance_experiment, ExperimentConfig};
use neuron::predictors::PredictorKind;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = ExperimentConfig {
        seeds: vec![seed],
        n_boot: 200,
        ..ExperimentConfig::default()
    };
    let (table, _models) = run_performance_experiment(&cfg).expect("experiment");
    println!(
        "{:<9} {:<14} {:>6}  {:<15} {:>6} {:>6}",
        "model", "config", "AUC", "95% CI", "sens", "spec"
    );
    for e in &table.entries {
        let r = &e.row;
        println!(
            "{:<9} {:<14} {:>6.3}  [{:.3}, {:.3}] {:>6.3} {:>6.3}",
            r.model, r.config, r.auc, r.auc_ci_lo, r.auc_ci_hi, r.sensitivity, r.specificity
        );
    }
    println!();
    for kind in PredictorKind::ALL {
        let aucs: Vec<String> = FeatureConfig::ALL
            .iter()
            .map(|c| format!("{:.3}", table.mean_auc(kind, *c).unwrap_or(f64::NAN)))
            .collect();
        println!(
            "{:<9} TABULAR → TABULAR_KG → NEUROSYMBOLIC: {}",
            kind.name(),
            aucs.join(" → ")
        );
    }
}
