//! Exact and kernel Shapley values for a trained logistic model, grouped
//! into ranked drivers.
//!
//! cargo run --release --example shapley_attribution

use neuron::attribution::{collapse_and_group, exact_shapley, kernel_shap, rank_drivers, OutputSpace};
use neuron::cohort::FeatureConfig;
use neuron::harness::{prepare_focus, ExperimentConfig};

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.explain.config = FeatureConfig::Tabular;
    let case = prepare_focus(&cfg, 0).expect("focus case");
    println!("explaining stay {} with {} features", case.record.stay_id, case.z.len());

    let exact = exact_shapley(&case.predictor, &case.z, &case.baseline, OutputSpace::Logit).expect("exact");
    let kernel = kernel_shap(&case.predictor, &case.z, &case.baseline, 2048, 1, OutputSpace::Logit).expect("kernel");
    let max_diff = exact
        .phi
        .iter()
        .zip(&kernel.phi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "phi0 {:.4}, f(x) {:.4}, efficiency gap {:.2e}",
        exact.phi0,
        exact.fx,
        exact.efficiency_gap()
    );
    println!("largest |exact − kernel| over coordinates: {max_diff:.2e}");

    let grouped = collapse_and_group(&exact, &case.layout, Some(&case.x_raw)).expect("grouping");
    let top = rank_drivers(&grouped, 5);
    println!("\ntop drivers:");
    for (d, t) in top.drivers.iter().zip(&top.tokens) {
        println!(
            "  {:<28} value {:>8}  φ {:+.4}",
            t,
            d.value.map_or("-".into(), |v| format!("{v:.1}")),
            d.phi
        );
    }
}
