//! Attribution quality metrics on a small hand-written model: axioms,
//! infidelity, sensitivity, top-k robustness and run stability.
//!
//! cargo run --release --example explanation_metrics

use neuron::attribution::{ExactExplainer, Explainer, FnModel, KernelExplainer, OutputSpace};
use neuron::metrics::{
    additivity_gap, completeness_score, infidelity, infidelity_exhaustive, perturbation_metrics, run_stability_cosine,
    PerturbationConfig,
};

fn main() {
    let model = FnModel {
        d: 4,
        f: |x: &[f64]| 0.8 * x[0] - 0.5 * x[1] + 0.3 * x[2] * x[3],
    };
    let x = [1.0, 2.0, -1.0, 0.5];
    let baseline = [0.0; 4];
    let exact = ExactExplainer {
        space: OutputSpace::Logit,
    };
    let attr = exact.explain(&model, &x, &baseline, 0).expect("exact");
    println!("φ = {:?}", attr.phi);
    println!(
        "completeness {:.6}, additivity gap {:.2e}",
        completeness_score(&attr),
        additivity_gap(&attr)
    );

    let cfg = PerturbationConfig {
        n_perturb: 2000,
        ..PerturbationConfig::default()
    };
    let mc = infidelity(&attr, &model, &x, &baseline, &cfg).expect("infidelity");
    let closed = infidelity_exhaustive(&attr, &model, &x, &baseline, cfg.mask_prob).expect("exhaustive");
    println!("infidelity: Monte Carlo {mc:.5}, exhaustive {closed:.5}");

    let pm =
        perturbation_metrics(&exact, &model, &x, &baseline, 2, &PerturbationConfig::default()).expect("perturbation");
    println!(
        "max-sensitivity {:.4}, top-2 Jaccard {:.3}",
        pm.max_sensitivity, pm.topk_jaccard
    );

    let kernel = KernelExplainer {
        n_samples: 10,
        space: OutputSpace::Logit,
    };
    let runs: Vec<Vec<f64>> = (0..10)
        .map(|s| kernel.explain(&model, &x, &baseline, s).expect("kernel").phi)
        .collect();
    let stab = run_stability_cosine(&runs).expect("stability");
    println!(
        "kernel run stability over 10 seeds: {:.4} (raw cosine {:.4})",
        stab.rescaled, stab.raw
    );
}
