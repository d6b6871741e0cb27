use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::util::{percentile_sorted, rng_for, sample_sd};

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
const STREAM_AGG: u64 = 0xA66;

/// Metric name to value for one run. Non-finite values mean "not computed".
pub type RunMetrics = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_runs: usize,
}

/// Mean that returns the common value exactly when all values agree.
fn stable_mean(xs: &[f64]) -> f64 {
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return xs[0];
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sorted means of `n_boot` resamples with replacement.
pub fn bootstrap_mean_replicates(values: &[f64], n_boot: usize, seed: u64) -> Vec<f64> {
    let n = values.len();
    let mut reps: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, &[STREAM_AGG, b as u64]);
            let sample: Vec<f64> = (0..n).map(|_| values[rng.random_range(0..n)]).collect();
            stable_mean(&sample)
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    reps
}

/// Standard error of the mean estimated by resampling.
pub fn bootstrap_sd(values: &[f64], n_boot: usize, seed: u64) -> f64 {
    sample_sd(&bootstrap_mean_replicates(values, n_boot, seed))
}

pub(super) fn summarize_with_sd(values: &[f64], sd: f64, seed: u64) -> Result<MetricSummary, MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooFewRuns(values.len()));
    }
    let mean = stable_mean(values);
    let reps = bootstrap_mean_replicates(values, BOOTSTRAP_RESAMPLES, seed);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ci_lo = percentile_sorted(&reps, 0.025).clamp(lo, hi).min(mean);
    let ci_hi = percentile_sorted(&reps, 0.975).clamp(lo, hi).max(mean);
    Ok(MetricSummary {
        mean,
        sd,
        ci_lo,
        ci_hi,
        n_runs: values.len(),
    })
}

/// Mean, sample SD and percentile-bootstrap 95% CI.
pub fn summarize(values: &[f64], seed: u64) -> Result<MetricSummary, MetricsError> {
    summarize_with_sd(values, sample_sd(values), seed)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Metrics with fewer than two usable runs.
    pub skipped: BTreeSet<String>,
}

/// Summarise every metric seen in any run.
pub fn aggregate(runs: &[RunMetrics], seed: u64) -> Result<MetricReport, MetricsError> {
    if runs.len() < 2 {
        return Err(MetricsError::TooFewRuns(runs.len()));
    }
    let keys: BTreeSet<&String> = runs.iter().flat_map(|r| r.keys()).collect();
    let mut report = MetricReport::default();
    for (i, key) in keys.into_iter().enumerate() {
        let vals: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.get(key))
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        match summarize(&vals, crate::util::derive_seed(seed, &[i as u64])) {
            Ok(s) => {
                report.metrics.insert(key.clone(), s);
            }
            Err(_) => {
                report.skipped.insert(key.clone());
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub label: &'static str,
    pub shap_key: Option<&'static str>,
    pub rag_key: Option<&'static str>,
}

const fn row(label: &'static str, shap_key: Option<&'static str>, rag_key: Option<&'static str>) -> TableRow {
    TableRow {
        label,
        shap_key,
        rag_key,
    }
}

/// Attribution-only rows, narrative-only rows, shared judge rows, then
/// coherence and stability.
pub const METRIC_TABLE: [TableRow; 15] = [
    row("Completeness", Some("completeness"), None),
    row("Additivity Gap", Some("additivity_gap"), None),
    row("Infidelity", Some("infidelity"), None),
    row("Max-Sensitivity", Some("max_sensitivity"), None),
    row("Robustness (Top-k Jaccard)", Some("robustness"), None),
    row("SHAP-Mass Coverage", None, Some("mass_coverage")),
    row("Narrative Completeness", None, Some("narrative_completeness")),
    row("Clinical Plausibility", None, Some("clinical_plausibility")),
    row("HA Faithfulness", Some("ha_faithfulness"), Some("ha_faithfulness")),
    row("HA Plausibility", Some("ha_plausibility"), Some("ha_plausibility")),
    row("HA Usefulness", Some("ha_usefulness"), Some("ha_usefulness")),
    row("HA Sensemaking", Some("ha_sensemaking"), Some("ha_sensemaking")),
    row("HA Overall", Some("ha_overall"), Some("ha_overall")),
    row("Narrative Coherence", None, Some("narrative_coherence")),
    row("Run-to-Run Stability", Some("stability"), Some("stability")),
];

pub const METRIC_TABLE_HEADER: [&str; 8] = ["metric", "side", "mean", "sd", "ci_lo", "ci_hi", "n_runs", "status"];

/// One line per (row, side) in [`METRIC_TABLE`] order; absent metrics are
/// written as skipped.
pub fn write_metric_table_csv<W: std::io::Write>(
    shap: &MetricReport,
    rag: &MetricReport,
    out: W,
) -> Result<(), std::io::Error> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| std::io::Error::other(e.to_string());
    w.write_record(METRIC_TABLE_HEADER).map_err(io)?;
    for r in METRIC_TABLE {
        for (side, key, report) in [("SHAP", r.shap_key, shap), ("RAG", r.rag_key, rag)] {
            let Some(key) = key else { continue };
            let rec: Vec<String> = match report.metrics.get(key) {
                Some(s) => {
                    let f = |v: f64| format!("{v:.6}");
                    vec![
                        r.label.into(),
                        side.into(),
                        f(s.mean),
                        f(s.sd),
                        f(s.ci_lo),
                        f(s.ci_hi),
                        s.n_runs.to_string(),
                        "ok".into(),
                    ]
                }
                None => vec![
                    r.label.into(),
                    side.into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "0".into(),
                    "skipped".into(),
                ],
            };
            w.write_record(&rec).map_err(io)?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_metric_collapses() {
        let s = summarize(&[0.1; 30], 1).unwrap();
        assert_eq!((s.mean, s.sd, s.ci_lo, s.ci_hi), (0.1, 0.0, 0.1, 0.1));
    }

    #[test]
    fn two_runs_and_errors() {
        let s = summarize(&[0.0, 1.0], 1).unwrap();
        assert_eq!(s.mean, 0.5);
        assert!(s.ci_lo >= 0.0 && s.ci_hi <= 1.0);
        assert_eq!(summarize(&[1.0], 1), Err(MetricsError::TooFewRuns(1)));
        assert_eq!(aggregate(&[RunMetrics::new()], 1), Err(MetricsError::TooFewRuns(1)));
    }

    #[test]
    fn ci_within_range_and_ordered() {
        let vals: Vec<f64> = (0..30).map(|i| ((i * 17) % 11) as f64 / 10.0).collect();
        let s = summarize(&vals, 9).unwrap();
        assert!(s.ci_lo <= s.mean && s.mean <= s.ci_hi);
        assert!(s.ci_lo >= 0.0 && s.ci_hi <= 1.0);
        assert_eq!(s, summarize(&vals, 9).unwrap());
    }

    #[test]
    fn aggregate_skips_sparse_metrics() {
        let mut a = RunMetrics::new();
        a.insert("x".into(), 1.0);
        a.insert("y".into(), f64::NAN);
        let mut b = a.clone();
        b.insert("x".into(), 3.0);
        let r = aggregate(&[a, b], 0).unwrap();
        assert_eq!(r.metrics["x"].mean, 2.0);
        assert!(r.skipped.contains("y"));
    }

    #[test]
    fn table_order_and_skips() {
        let mut shap = MetricReport::default();
        shap.metrics.insert(
            "completeness".into(),
            MetricSummary {
                mean: 1.0,
                sd: 0.0,
                ci_lo: 1.0,
                ci_hi: 1.0,
                n_runs: 30,
            },
        );
        let mut buf = Vec::new();
        write_metric_table_csv(&shap, &MetricReport::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 5 + 3 + 2 * 5 + 1 + 2);
        assert!(lines[1].starts_with("Completeness,SHAP,1.000000"));
        assert!(lines[2].ends_with("skipped"));
        assert!(lines.last().unwrap().starts_with("Run-to-Run Stability,RAG"));
    }
}
