use rand::Rng;
use rayon::prelude::*;

use super::{MetricsError, PerturbationConfig};
use crate::attribution::{AttributionVector, Model, MAX_EXACT_FEATURES};
use crate::util::{mean, rng_for};

const STREAM_MASK: u64 = 0x1F1D;

/// `1 − |Σφ − (f(x) − φ0)| / (|f(x) − φ0| + 1e-12)`.
pub fn completeness_score(attr: &AttributionVector) -> f64 {
    let delta = attr.fx - attr.phi0;
    let resid = attr.phi.iter().sum::<f64>() - delta;
    1.0 - resid.abs() / (delta.abs() + 1e-12)
}

/// `|f(x) − (φ0 + Σφ)|`.
pub fn additivity_gap(attr: &AttributionVector) -> f64 {
    attr.efficiency_gap()
}

fn masked_error(
    attr: &AttributionVector,
    model: &dyn Model,
    x: &[f64],
    baseline: &[f64],
    fx: f64,
    mask: impl Fn(usize) -> bool,
) -> f64 {
    let mut xi = x.to_vec();
    let mut dot = 0.0;
    for j in 0..x.len() {
        if mask(j) {
            xi[j] = baseline[j];
            dot += attr.phi[j];
        }
    }
    let e = dot - (fx - model.output(&xi, attr.space));
    e * e
}

fn check_dims(attr: &AttributionVector, x: &[f64], baseline: &[f64]) -> Result<(), MetricsError> {
    for len in [x.len(), baseline.len()] {
        if len != attr.phi.len() {
            return Err(crate::attribution::AttributionError::DimensionMismatch {
                expected: attr.phi.len(),
                got: len,
            }
            .into());
        }
    }
    Ok(())
}

/// Per-draw squared errors `(Iᵀφ − (f(x) − f(x_I)))²`; draw `t` uses its
/// own stream so the result does not depend on scheduling.
pub fn infidelity_samples(
    attr: &AttributionVector,
    model: &dyn Model,
    x: &[f64],
    baseline: &[f64],
    cfg: &PerturbationConfig,
) -> Result<Vec<f64>, MetricsError> {
    cfg.validate()?;
    check_dims(attr, x, baseline)?;
    let fx = model.output(x, attr.space);
    Ok((0..cfg.n_perturb)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(cfg.seed, &[STREAM_MASK, t as u64]);
            let mask: Vec<bool> = (0..x.len()).map(|_| rng.random_bool(cfg.mask_prob)).collect();
            masked_error(attr, model, x, baseline, fx, |j| mask[j])
        })
        .collect())
}

/// Monte-Carlo estimate of the expected squared masking error.
pub fn infidelity(
    attr: &AttributionVector,
    model: &dyn Model,
    x: &[f64],
    baseline: &[f64],
    cfg: &PerturbationConfig,
) -> Result<f64, MetricsError> {
    Ok(mean(&infidelity_samples(attr, model, x, baseline, cfg)?))
}

/// The same expectation summed over all `2^d` masks.
pub fn infidelity_exhaustive(
    attr: &AttributionVector,
    model: &dyn Model,
    x: &[f64],
    baseline: &[f64],
    mask_prob: f64,
) -> Result<f64, MetricsError> {
    check_dims(attr, x, baseline)?;
    let d = x.len();
    if d > MAX_EXACT_FEATURES {
        return Err(crate::attribution::AttributionError::TooManyFeatures(d).into());
    }
    let fx = model.output(x, attr.space);
    let terms: Vec<f64> = (0u64..1 << d)
        .into_par_iter()
        .map(|m| {
            let k = m.count_ones() as i32;
            let p = mask_prob.powi(k) * (1.0 - mask_prob).powi(d as i32 - k);
            p * masked_error(attr, model, x, baseline, fx, |j| m >> j & 1 == 1)
        })
        .collect();
    // summed in order so the result does not depend on thread count
    Ok(terms.iter().sum())
}
