use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::{AttributionError, AttributionVector, Model, OutputSpace};
use crate::util::rng_for;

pub const MAX_EXACT_FEATURES: usize = 20;

const STREAM_KERNEL: u64 = 0x5A4B;
const RIDGE: f64 = 1e-6;

fn check(model: &dyn Model, x: &[f64], baseline: &[f64]) -> Result<usize, AttributionError> {
    let d = model.n_features();
    for len in [x.len(), baseline.len()] {
        if len != d {
            return Err(AttributionError::DimensionMismatch { expected: d, got: len });
        }
    }
    Ok(d)
}

/// Evaluate the model with coordinates outside `mask` set to the baseline.
fn masked_value(model: &dyn Model, x: &[f64], baseline: &[f64], mask: u64, space: OutputSpace) -> f64 {
    let z: Vec<f64> = (0..x.len())
        .map(|j| if mask >> j & 1 == 1 { x[j] } else { baseline[j] })
        .collect();
    model.output(&z, space)
}

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact Shapley values by evaluating all `2^d` coalitions.
pub fn exact_shapley(
    model: &dyn Model,
    x: &[f64],
    baseline: &[f64],
    space: OutputSpace,
) -> Result<AttributionVector, AttributionError> {
    let d = check(model, x, baseline)?;
    if d > MAX_EXACT_FEATURES {
        return Err(AttributionError::TooManyFeatures(d));
    }
    let full = (1u64 << d) - 1;
    let values: Vec<f64> = (0..=full)
        .into_par_iter()
        .map(|m| masked_value(model, x, baseline, m, space))
        .collect();
    // weight for a coalition of size s not containing j: s!(d-s-1)!/d!
    let weights: Vec<f64> = (0..d).map(|s| 1.0 / (d as f64 * binom(d - 1, s))).collect();
    let phi: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|j| {
            let bit = 1u64 << j;
            let mut acc = 0.0;
            for m in 0..=full {
                if m & bit == 0 {
                    acc += weights[m.count_ones() as usize] * (values[(m | bit) as usize] - values[m as usize]);
                }
            }
            acc
        })
        .collect();
    Ok(AttributionVector {
        phi0: values[0],
        phi,
        fx: values[full as usize],
        space,
        column_names: Vec::new(),
    })
}

/// Shapley kernel weight of a coalition of size `s` out of `d`.
pub fn shapley_kernel_weight(d: usize, s: usize) -> f64 {
    if s == 0 || s == d {
        return f64::INFINITY;
    }
    (d - 1) as f64 / (binom(d, s) * s as f64 * (d - s) as f64)
}

fn for_each_subset(d: usize, s: usize, mut f: impl FnMut(u64)) {
    if s == 0 {
        f(0);
        return;
    }
    // Gosper's hack over all d-bit words with s ones
    let mut m: u64 = (1u64 << s) - 1;
    let limit = 1u64 << d;
    while m < limit {
        f(m);
        let c = m & m.wrapping_neg();
        let r = m + c;
        m = (((r ^ m) >> 2) / c) | r;
    }
}

/// Choose the weighted coalition set. Coalition sizes are taken in
/// complementary pairs from the outside in; a pair is enumerated in full
/// while the remaining budget covers it in proportion to its kernel mass
/// (the size-1 pair whenever it fits, which makes every feature separable),
/// and the leftover mass is spread over sampled coalitions (each drawn with
/// its complement, duplicates merged).
fn coalitions(d: usize, budget: usize, seed: u64) -> BTreeMap<u64, f64> {
    let mut out: BTreeMap<u64, f64> = BTreeMap::new();
    let total = (1u64 << d) - 2;
    if budget as u64 >= total {
        for s in 1..d {
            let w = shapley_kernel_weight(d, s);
            for_each_subset(d, s, |m| {
                out.insert(m, w);
            });
        }
        return out;
    }
    let mass: Vec<f64> = (0..=d)
        .map(|s| {
            if s == 0 || s == d {
                0.0
            } else {
                (d - 1) as f64 / (s * (d - s)) as f64
            }
        })
        .collect();
    let n_pairs = d / 2;
    let mut left = budget;
    let mut remaining_sizes: Vec<usize> = (1..d).collect();
    for p in 1..=n_pairs {
        let sizes: Vec<usize> = if p == d - p { vec![p] } else { vec![p, d - p] };
        let count: f64 = sizes.iter().map(|&s| binom(d, s)).sum();
        let rem_mass: f64 = remaining_sizes.iter().map(|&s| mass[s]).sum();
        let pair_mass: f64 = sizes.iter().map(|&s| mass[s]).sum();
        let covered = left as f64 * pair_mass / rem_mass >= count - 1e-8;
        if count <= left as f64 && (p == 1 || covered) {
            for &s in &sizes {
                let w = shapley_kernel_weight(d, s);
                for_each_subset(d, s, |m| {
                    out.insert(m, w);
                });
            }
            left -= count as usize;
            remaining_sizes.retain(|s| !sizes.contains(s));
        } else {
            break;
        }
    }
    if remaining_sizes.is_empty() || left == 0 {
        return out;
    }
    let rem_mass: f64 = remaining_sizes.iter().map(|&s| mass[s]).sum();
    let available: f64 = remaining_sizes.iter().map(|&s| binom(d, s)).sum();
    let target = left.min(available as usize);
    let mut rng = rng_for(seed, &[STREAM_KERNEL, d as u64, budget as u64]);
    let mut drawn: BTreeMap<u64, f64> = BTreeMap::new();
    let mut draws = 0usize;
    let max_draws = 50 * target.max(1) + 1000;
    let full = (1u64 << d) - 1;
    while drawn.len() < target && draws < max_draws {
        let mut u = rng.random::<f64>() * rem_mass;
        let mut size = *remaining_sizes.last().expect("non-empty");
        for &s in &remaining_sizes {
            if u < mass[s] {
                size = s;
                break;
            }
            u -= mass[s];
        }
        let picked = rand::seq::index::sample(&mut rng, d, size);
        let m = picked.iter().fold(0u64, |acc, j| acc | 1u64 << j);
        *drawn.entry(m).or_default() += 1.0;
        draws += 1;
        if drawn.len() < target && remaining_sizes.contains(&(d - size)) {
            *drawn.entry(full ^ m).or_default() += 1.0;
            draws += 1;
        }
    }
    let per_draw = rem_mass / draws.max(1) as f64;
    for (m, c) in drawn {
        out.insert(m, c * per_draw);
    }
    out
}

/// KernelSHAP: weighted least squares over coalitions under the constraint
/// `phi0 + Σφ = f(x)`, solved by eliminating the last coordinate.
pub fn kernel_shap(
    model: &dyn Model,
    x: &[f64],
    baseline: &[f64],
    n_samples: usize,
    seed: u64,
    space: OutputSpace,
) -> Result<AttributionVector, AttributionError> {
    let d = check(model, x, baseline)?;
    if d >= 63 {
        return Err(AttributionError::TooManyFeatures(d));
    }
    let min = 2 * d + 2;
    if n_samples < min {
        return Err(AttributionError::TooFewSamples { min, got: n_samples });
    }
    let full = (1u64 << d) - 1;
    let phi0 = masked_value(model, x, baseline, 0, space);
    let fx = masked_value(model, x, baseline, full, space);
    if d == 1 {
        return Ok(AttributionVector {
            phi0,
            phi: vec![fx - phi0],
            fx,
            space,
            column_names: Vec::new(),
        });
    }
    let coal: Vec<(u64, f64)> = coalitions(d, n_samples - 2, seed).into_iter().collect();
    let values: Vec<f64> = coal
        .par_iter()
        .map(|(m, _)| masked_value(model, x, baseline, *m, space))
        .collect();
    let delta = fx - phi0;
    let k = d - 1;
    let last = 1u64 << k;
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for ((m, w), v) in coal.iter().zip(&values) {
        let zl = if m & last != 0 { 1.0 } else { 0.0 };
        for (j, r) in row.iter_mut().enumerate() {
            *r = if m >> j & 1 == 1 { 1.0 } else { 0.0 } - zl;
        }
        let y = v - phi0 - zl * delta;
        for i in 0..k {
            if row[i] == 0.0 {
                continue;
            }
            b[i] += w * row[i] * y;
            for j in 0..k {
                a[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    let sol = match a.clone().cholesky() {
        Some(c) => c.solve(&b),
        None => {
            let ridge = a + DMatrix::identity(k, k) * RIDGE;
            ridge.cholesky().ok_or(AttributionError::SingularSystem)?.solve(&b)
        }
    };
    let mut phi: Vec<f64> = sol.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(AttributionVector {
        phi0,
        phi,
        fx,
        space,
        column_names: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::FnModel;

    fn m2(f: fn(&[f64]) -> f64) -> FnModel<fn(&[f64]) -> f64> {
        FnModel { d: 2, f }
    }

    #[test]
    fn exact_examples() {
        let lin = exact_shapley(&m2(|x| x[0] + x[1]), &[1.0, 2.0], &[0.0, 0.0], OutputSpace::Logit).unwrap();
        assert_eq!((lin.phi.clone(), lin.phi0), (vec![1.0, 2.0], 0.0));
        let prod = exact_shapley(&m2(|x| x[0] * x[1]), &[1.0, 1.0], &[0.0, 0.0], OutputSpace::Logit).unwrap();
        assert_eq!(prod.phi, vec![0.5, 0.5]);
        let max = exact_shapley(&m2(|x| x[0].max(x[1])), &[1.0, 1.0], &[0.0, 0.0], OutputSpace::Logit).unwrap();
        assert_eq!(max.phi, vec![0.5, 0.5]);
    }

    #[test]
    fn exact_guards_dimension() {
        let m = FnModel {
            d: 21,
            f: |x: &[f64]| x[0],
        };
        assert_eq!(
            exact_shapley(&m, &[0.0; 21], &[0.0; 21], OutputSpace::Logit),
            Err(AttributionError::TooManyFeatures(21))
        );
        assert!(matches!(
            exact_shapley(&m2(|x| x[0]), &[0.0; 3], &[0.0; 2], OutputSpace::Logit),
            Err(AttributionError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_weights_cover_sizes() {
        for d in 2..10 {
            let all = coalitions(d, (1 << d) - 2, 0);
            assert_eq!(all.len(), (1 << d) - 2);
            // partial budgets never exceed the budget
            for budget in [2 * d, 3 * d + 1, (1 << d) / 2] {
                let c = coalitions(d, budget, 3);
                assert!(c.len() <= budget.max(1), "d={d} budget={budget} got {}", c.len());
                assert!(c.values().all(|w| *w > 0.0));
            }
        }
    }

    #[test]
    fn kernel_full_enumeration_matches_exact() {
        let f = |x: &[f64]| x[0] * x[1] + x[2].max(x[3]) - 0.5 * x[4] * x[5] * x[6] + x[7].sin();
        let m = FnModel { d: 8, f };
        let x: Vec<f64> = (0..8).map(|i| 0.3 * i as f64 - 0.7).collect();
        let b = vec![0.1; 8];
        let e = exact_shapley(&m, &x, &b, OutputSpace::Logit).unwrap();
        let k = kernel_shap(&m, &x, &b, 256, 9, OutputSpace::Logit).unwrap();
        for (a, c) in e.phi.iter().zip(&k.phi) {
            assert!((a - c).abs() < 1e-9, "{a} vs {c}");
        }
    }

    #[test]
    fn kernel_linear_exact_at_minimum_budget() {
        let w = [0.5, -1.0, 2.0, 0.0, 1.5, -0.25];
        let m = FnModel {
            d: 6,
            f: move |x: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + 0.3,
        };
        let x = [1.0, 2.0, -1.0, 4.0, 0.5, 2.0];
        let b = [0.0; 6];
        for seed in 0..20 {
            let k = kernel_shap(&m, &x, &b, 14, seed, OutputSpace::Logit).unwrap();
            for j in 0..6 {
                assert!((k.phi[j] - w[j] * x[j]).abs() < 1e-6, "seed {seed}: {:?}", k.phi);
            }
            assert!(k.efficiency_gap() < 1e-12);
        }
    }

    #[test]
    fn kernel_is_seeded() {
        let m = FnModel {
            d: 5,
            f: |x: &[f64]| x[0] * x[1] * x[2] + x[3].max(x[4]),
        };
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let a = kernel_shap(&m, &x, &b, 14, 1, OutputSpace::Logit).unwrap();
        assert_eq!(a, kernel_shap(&m, &x, &b, 14, 1, OutputSpace::Logit).unwrap());
        assert_eq!(
            kernel_shap(&m, &x, &b, 11, 1, OutputSpace::Logit),
            Err(AttributionError::TooFewSamples { min: 12, got: 11 })
        );
    }

    #[test]
    fn prob_space_is_sigmoid_of_logit() {
        let m = m2(|x| x[0] - x[1]);
        let a = exact_shapley(&m, &[2.0, 1.0], &[0.0, 0.0], OutputSpace::Prob).unwrap();
        assert!((a.fx - crate::util::sigmoid(1.0)).abs() < 1e-15);
        assert!(a.efficiency_gap() < 1e-12);
    }
}
