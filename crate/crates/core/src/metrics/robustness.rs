use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::summarize_with_sd;
use super::{MetricSummary, MetricsError, PerturbationConfig};
use crate::attribution::{Explainer, Model};
use crate::util::{mean, rng_for, sample_sd};

const STREAM_DELTA: u64 = 0x5E45;

/// Indices of the `k` largest |φ|; ties go to the lower index.
pub fn top_k(phi: &[f64], k: usize) -> BTreeSet<usize> {
    let mut idx: Vec<usize> = (0..phi.len()).collect();
    idx.sort_by(|a, b| phi[*b].abs().total_cmp(&phi[*a].abs()).then(a.cmp(b)));
    idx.into_iter().take(k).collect()
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationMetrics {
    pub max_sensitivity: f64,
    pub topk_jaccard: f64,
}

/// Shared uniform draws from the L∞ ball of radius `cfg.radius`. Every
/// perturbed explanation reuses `cfg.seed`, so only the input changes.
pub fn perturbation_metrics(
    explainer: &dyn Explainer,
    model: &dyn Model,
    x: &[f64],
    baseline: &[f64],
    k: usize,
    cfg: &PerturbationConfig,
) -> Result<PerturbationMetrics, MetricsError> {
    cfg.validate()?;
    let k = k.max(1);
    let reference = explainer.explain(model, x, baseline, cfg.seed)?;
    let ref_top = top_k(&reference.phi, k);
    let per_draw: Vec<(f64, f64)> = (0..cfg.n_perturb)
        .into_par_iter()
        .map(|t| {
            let mut xt = x.to_vec();
            if cfg.radius > 0.0 {
                let mut rng = rng_for(cfg.seed, &[STREAM_DELTA, t as u64]);
                for v in xt.iter_mut() {
                    *v += rng.random_range(-cfg.radius..=cfg.radius);
                }
            }
            let a = explainer.explain(model, &xt, baseline, cfg.seed)?;
            let dist = a
                .phi
                .iter()
                .zip(&reference.phi)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            Ok((dist, jaccard(&ref_top, &top_k(&a.phi, k))))
        })
        .collect::<Result<_, MetricsError>>()?;
    Ok(PerturbationMetrics {
        max_sensitivity: per_draw.iter().map(|p| p.0).fold(0.0, f64::max),
        topk_jaccard: mean(&per_draw.iter().map(|p| p.1).collect::<Vec<_>>()),
    })
}

pub fn max_sensitivity(
    explainer: &dyn Explainer,
    model: &dyn Model,
    x: &[f64],
    baseline: &[f64],
    cfg: &PerturbationConfig,
) -> Result<f64, MetricsError> {
    Ok(perturbation_metrics(explainer, model, x, baseline, 1, cfg)?.max_sensitivity)
}

pub fn topk_jaccard_robustness(
    explainer: &dyn Explainer,
    model: &dyn Model,
    x: &[f64],
    baseline: &[f64],
    k: usize,
    cfg: &PerturbationConfig,
) -> Result<f64, MetricsError> {
    Ok(perturbation_metrics(explainer, model, x, baseline, k, cfg)?.topk_jaccard)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Mean pairwise cosine in [−1, 1].
    pub raw: f64,
    /// `(1 + raw) / 2`.
    pub rescaled: f64,
    /// Rescaled similarity of every pair, in (i, j) order with i < j.
    pub pairs: Vec<f64>,
}

fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Mean cosine similarity over all pairs of runs. A zero vector scores 0
/// against any partner.
pub fn run_stability_cosine(vectors: &[Vec<f64>]) -> Result<StabilityReport, MetricsError> {
    if vectors.len() < 2 {
        return Err(MetricsError::TooFewRuns(vectors.len()));
    }
    let mut raw = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            raw.push(cosine_or_zero(&vectors[i], &vectors[j]));
        }
    }
    let m = mean(&raw);
    Ok(StabilityReport {
        raw: m,
        rescaled: (1.0 + m) / 2.0,
        pairs: raw.iter().map(|s| (1.0 + s) / 2.0).collect(),
    })
}

/// Stability as a table row: mean and SD over pairs, bootstrap CI over pairs.
pub fn stability_summary(vectors: &[Vec<f64>], seed: u64) -> Result<MetricSummary, MetricsError> {
    let r = run_stability_cosine(vectors)?;
    let mut s = summarize_with_sd(&r.pairs, sample_sd(&r.pairs), seed)?;
    s.mean = r.rescaled;
    s.n_runs = vectors.len();
    Ok(s)
}
