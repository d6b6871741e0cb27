//! Explanation-quality metrics for both modalities: attribution axioms and
//! perturbation metrics on one side, narrative coverage, plausibility and
//! judge scores on the other, plus aggregation over repeated runs.

mod aggregate;
mod axioms;
mod judge;
mod robustness;
mod text;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{
    aggregate, bootstrap_mean_replicates, bootstrap_sd, summarize, write_metric_table_csv, MetricReport, MetricSummary,
    RunMetrics, TableRow, BOOTSTRAP_RESAMPLES, METRIC_TABLE,
};
pub use axioms::{additivity_gap, completeness_score, infidelity, infidelity_exhaustive, infidelity_samples};
pub use judge::{coherence_score, judge_scores, HttpJudge, JudgeClient, JudgeScores, StubJudge, RUBRIC};
pub use robustness::{
    jaccard, max_sensitivity, perturbation_metrics, run_stability_cosine, stability_summary, top_k,
    topk_jaccard_robustness, PerturbationMetrics, StabilityReport,
};
pub use text::{
    clinical_plausibility, narrative_completeness, required_items, score_claim, shap_mass_coverage, CompletenessReport,
    RequiredItem,
};

use crate::attribution::AttributionError;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no drivers to score")]
    EmptyTopK,
    #[error("no claims extracted")]
    NoClaims,
    #[error("need at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("malformed judge response: {0}")]
    MalformedJudgeResponse(String),
    #[error("invalid perturbation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    /// L∞ radius for sensitivity and robustness draws.
    pub radius: f64,
    pub n_perturb: usize,
    /// Per-coordinate masking probability for infidelity.
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            radius: 0.1,
            n_perturb: 50,
            mask_prob: 0.5,
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(MetricsError::InvalidConfig(format!(
                "radius {} must be >= 0",
                self.radius
            )));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(MetricsError::InvalidConfig(format!(
                "mask_prob {} must be in (0, 1)",
                self.mask_prob
            )));
        }
        if self.n_perturb == 0 {
            return Err(MetricsError::InvalidConfig("n_perturb must be >= 1".into()));
        }
        Ok(())
    }
}
