use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Predictor, PredictorError};
use crate::cohort::FeatureMatrix;
use crate::util::{percentile_sorted, rng_for};

const STREAM_BOOT: u64 = 0xB007;

/// Area under the ROC curve from midranks; tied scores count one half.
/// Returns `None` if either class is absent.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n = scores.len();
    let n1 = labels.iter().filter(|l| **l == 1).count();
    let n0 = n - n1;
    if n1 == 0 || n0 == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let n1f = n1 as f64;
    Some((rank_sum - n1f * (n1f + 1.0) / 2.0) / (n1f * n0 as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    fn ratio(a: usize, b: usize) -> f64 {
        if b == 0 {
            0.0
        } else {
            a as f64 / b as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }

    pub fn sensitivity(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn specificity(&self) -> f64 {
        Self::ratio(self.tn, self.tn + self.fp)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.sensitivity());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Predicted positive when `p >= threshold`.
pub fn confusion_at(probs: &[f64], labels: &[u8], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (p, l) in probs.iter().zip(labels) {
        match (*p >= threshold, *l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapAuc {
    /// Sorted AUCs of the resamples that contained both classes.
    pub replicates: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile 95% interval over `n_boot` resamples of the rows. Resample `b`
/// draws from its own seeded stream, so the result does not depend on
/// thread scheduling.
pub fn bootstrap_auc(scores: &[f64], labels: &[u8], n_boot: usize, seed: u64) -> Option<BootstrapAuc> {
    let n = scores.len();
    let mut replicates: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = rng_for(seed, &[STREAM_BOOT, b as u64]);
            let mut s = Vec::with_capacity(n);
            let mut l = Vec::with_capacity(n);
            for _ in 0..n {
                let i = rng.random_range(0..n);
                s.push(scores[i]);
                l.push(labels[i]);
            }
            auc(&s, &l)
        })
        .collect();
    if replicates.is_empty() {
        return None;
    }
    replicates.sort_by(f64::total_cmp);
    Some(BootstrapAuc {
        lo: percentile_sorted(&replicates, 0.025),
        hi: percentile_sorted(&replicates, 0.975),
        replicates,
    })
}

/// One line of the performance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub model: String,
    pub config: String,
    pub auc: f64,
    pub auc_ci_lo: f64,
    pub auc_ci_hi: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub precision: f64,
    pub f1: f64,
    pub specificity: f64,
    pub n_val: usize,
}

impl PerformanceRow {
    pub const CSV_HEADER: [&'static str; 11] = [
        "model",
        "config",
        "auc",
        "auc_ci_lo",
        "auc_ci_hi",
        "accuracy",
        "sensitivity",
        "precision",
        "f1",
        "specificity",
        "n_val",
    ];

    pub fn write_csv<W: std::io::Write>(rows: &[PerformanceRow], out: W) -> Result<(), PredictorError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| PredictorError::Io(e.to_string());
        w.write_record(Self::CSV_HEADER).map_err(io)?;
        for r in rows {
            let f = |v: f64| format!("{v:.4}");
            w.write_record([
                r.model.clone(),
                r.config.clone(),
                f(r.auc),
                f(r.auc_ci_lo),
                f(r.auc_ci_hi),
                f(r.accuracy),
                f(r.sensitivity),
                f(r.precision),
                f(r.f1),
                f(r.specificity),
                r.n_val.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| PredictorError::Io(e.to_string()))
    }
}

/// Metrics for precomputed probabilities.
pub fn evaluate_scores(
    probs: &[f64],
    labels: &[u8],
    n_boot: usize,
    seed: u64,
) -> Result<(f64, BootstrapAuc, Confusion), PredictorError> {
    if n_boot < 100 {
        return Err(PredictorError::TooFewBootstraps(n_boot));
    }
    if probs.len() != labels.len() {
        return Err(PredictorError::DimensionMismatch {
            expected: labels.len(),
            got: probs.len(),
        });
    }
    let a = auc(probs, labels).ok_or(PredictorError::SingleClassValidation)?;
    let boot = bootstrap_auc(probs, labels, n_boot, seed).ok_or(PredictorError::SingleClassValidation)?;
    Ok((a, boot, confusion_at(probs, labels, 0.5)))
}

pub fn evaluate(
    model: &Predictor,
    val: &FeatureMatrix,
    n_boot: usize,
    seed: u64,
) -> Result<PerformanceRow, PredictorError> {
    let probs = model.predict_proba_matrix(&val.values)?;
    let (a, boot, c) = evaluate_scores(&probs, &val.labels, n_boot, seed)?;
    Ok(PerformanceRow {
        model: model.kind.name().to_string(),
        config: model.config.unwrap_or(val.config).name().to_string(),
        auc: a,
        auc_ci_lo: boot.lo,
        auc_ci_hi: boot.hi,
        accuracy: c.accuracy(),
        sensitivity: c.sensitivity(),
        precision: c.precision(),
        f1: c.f1(),
        specificity: c.specificity(),
        n_val: val.n_rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_edge_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]), Some(1.0));
        assert_eq!(auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]), Some(0.5));
        assert_eq!(auc(&[0.1, 0.2], &[1, 1]), None);
        // one tie across classes
        assert_eq!(auc(&[0.1, 0.5, 0.5, 0.9], &[0, 0, 1, 1]), Some(0.875));
    }

    #[test]
    fn auc_invariant_under_monotone_map() {
        let s = [0.3, 0.1, 0.7, 0.2, 0.9, 0.4];
        let l = [0, 0, 1, 1, 1, 0];
        let t: Vec<f64> = s.iter().map(|v: &f64| (5.0 * v).exp() - 3.0).collect();
        assert_eq!(auc(&s, &l), auc(&t, &l));
    }

    #[test]
    fn confusion_arithmetic() {
        let c = Confusion {
            tp: 3,
            fp: 1,
            fn_: 1,
            tn: 5,
        };
        assert_eq!(c.sensitivity(), 0.75);
        assert_eq!(c.precision(), 0.75);
        assert_eq!(c.f1(), 0.75);
        assert_eq!(c.specificity(), 5.0 / 6.0);
        assert_eq!(c.accuracy(), 0.8);
        let probs = [0.9, 0.6, 0.5, 0.2, 0.7, 0.1, 0.3, 0.4, 0.2, 0.0];
        let labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        assert_eq!(confusion_at(&probs, &labels, 0.5), c);
    }

    #[test]
    fn bootstrap_bounds_and_errors() {
        let s: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let l: Vec<u8> = (0..200).map(|i| u8::from((i * 37) % 101 > 40)).collect();
        let b = bootstrap_auc(&s, &l, 200, 1).unwrap();
        assert!(b.lo >= b.replicates[0] && b.hi <= *b.replicates.last().unwrap());
        assert_eq!(bootstrap_auc(&s, &l, 200, 1), Some(b));
        assert_eq!(
            evaluate_scores(&s, &l, 50, 1).err(),
            Some(PredictorError::TooFewBootstraps(50))
        );
        assert_eq!(
            evaluate_scores(&s, &[0; 200], 100, 1).err(),
            Some(PredictorError::SingleClassValidation)
        );
    }
}
