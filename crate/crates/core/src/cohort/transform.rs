use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AdmissionRecord, CohortError, Feature, FeatureMatrix, FEATURES};
use crate::util::{median, rng_for};

pub const DEFAULT_MAX_MISSING: f64 = 0.30;

const STREAM_SPLIT: u64 = 2;

/// Keep records with a label and at most `max_frac` of the 18 predictors missing.
pub fn filter_missingness(records: &[AdmissionRecord], max_frac: f64) -> Vec<AdmissionRecord> {
    let n = FEATURES.len() as f64;
    records
        .iter()
        .filter(|r| r.label.is_some() && r.missing_count() as f64 / n <= max_frac)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitMode {
    #[default]
    Stay,
    Subject,
}

/// Seeded train/validation partition. The validation side receives
/// `floor(val_frac·n)` stays (STAY) or whole subjects until that many stays
/// are reached (SUBJECT). Both sides keep input order.
pub fn split(
    records: &[AdmissionRecord],
    mode: SplitMode,
    val_frac: f64,
    seed: u64,
) -> (Vec<AdmissionRecord>, Vec<AdmissionRecord>) {
    assert!(val_frac > 0.0 && val_frac < 1.0, "val_frac must lie in (0, 1)");
    let mut rng = rng_for(seed, &[STREAM_SPLIT]);
    let target = (val_frac * records.len() as f64).floor() as usize;
    let mut in_val = vec![false; records.len()];
    match mode {
        SplitMode::Stay => {
            let mut idx: Vec<usize> = (0..records.len()).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..target] {
                in_val[i] = true;
            }
        }
        SplitMode::Subject => {
            let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                by_subject.entry(r.subject_id.as_str()).or_default().push(i);
            }
            let mut groups: Vec<Vec<usize>> = by_subject.into_values().collect();
            groups.shuffle(&mut rng);
            let mut taken = 0;
            for g in groups {
                if taken >= target {
                    break;
                }
                taken += g.len();
                for i in g {
                    in_val[i] = true;
                }
            }
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (r, v) in records.iter().zip(in_val) {
        if v {
            val.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    (train, val)
}

/// Per-feature medians learned from training rows. Drug flags fill with 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianImputer {
    pub fill: BTreeMap<Feature, f64>,
}

impl MedianImputer {
    pub fn fit(train: &[AdmissionRecord]) -> Result<Self, CohortError> {
        let mut fill = BTreeMap::new();
        for f in FEATURES {
            let observed: Vec<f64> = train.iter().filter_map(|r| r.get(f)).collect();
            if observed.is_empty() {
                return Err(CohortError::AllMissingFeature(f.key().to_string()));
            }
            let v = if f.is_binary() {
                0.0
            } else {
                median(&observed).expect("non-empty")
            };
            fill.insert(f, v);
        }
        Ok(Self { fill })
    }

    pub fn apply(&self, records: &[AdmissionRecord]) -> Vec<AdmissionRecord> {
        records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                for f in FEATURES {
                    if r.get(f).is_none() {
                        r.features.insert(f, Some(self.fill[&f]));
                        r.imputed.insert(f);
                    }
                }
                r
            })
            .collect()
    }
}

pub fn impute_median(
    train: &[AdmissionRecord],
    apply_to: &[AdmissionRecord],
) -> Result<Vec<AdmissionRecord>, CohortError> {
    Ok(MedianImputer::fit(train)?.apply(apply_to))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScaleMode {
    #[default]
    Zscore,
    Minmax,
    None,
}

/// Column transform `x' = (x − shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mode: ScaleMode,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

pub struct Scaler;

impl Scaler {
    /// Fit on the rows of `train`. ZSCORE uses the population SD with σ = 0
    /// replaced by 1; MINMAX maps constant columns to 0.
    pub fn fit(train: &Array2<f64>, mode: ScaleMode) -> ScalerParams {
        let d = train.ncols();
        let (shift, scale) = match mode {
            ScaleMode::None => (vec![0.0; d], vec![1.0; d]),
            ScaleMode::Zscore => train
                .axis_iter(Axis(1))
                .map(|col| {
                    let n = col.len().max(1) as f64;
                    let mu = col.sum() / n;
                    let var = col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
                    let sd = var.sqrt();
                    (mu, if sd > 0.0 { sd } else { 1.0 })
                })
                .unzip(),
            ScaleMode::Minmax => train
                .axis_iter(Axis(1))
                .map(|col| {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if col.is_empty() {
                        (0.0, 1.0)
                    } else if hi > lo {
                        (lo, hi - lo)
                    } else {
                        // constant column: (x - x) / inf = 0 for the train value
                        (lo, f64::INFINITY)
                    }
                })
                .unzip(),
        };
        ScalerParams { mode, shift, scale }
    }
}

impl ScalerParams {
    pub fn identity(d: usize) -> Self {
        Self {
            mode: ScaleMode::None,
            shift: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn width(&self) -> usize {
        self.shift.len()
    }

    pub fn transform_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, c))| if c.is_infinite() { 0.0 } else { (v - s) / c })
            .collect()
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        if self.mode == ScaleMode::None {
            return x.clone();
        }
        let mut out = x.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if self.scale[j].is_infinite() {
                    0.0
                } else {
                    (*v - self.shift[j]) / self.scale[j]
                };
            }
        }
        out
    }

    /// Map a model-space row back to raw units. Constant MINMAX columns come
    /// back as their training value.
    pub fn inverse_row(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, c))| if c.is_infinite() { *s } else { v * c + s })
            .collect()
    }
}

/// Scale `matrix` with statistics fitted on `fit_on`.
pub fn scale(matrix: &FeatureMatrix, mode: ScaleMode, fit_on: &FeatureMatrix) -> (FeatureMatrix, ScalerParams) {
    let params = Scaler::fit(&fit_on.values, mode);
    let mut out = matrix.clone();
    out.values = params.transform(&matrix.values);
    (out, params)
}

/// Filtered, split and imputed cohort.
#[derive(Debug, Clone)]
pub struct PreparedCohort {
    pub train: Vec<AdmissionRecord>,
    pub val: Vec<AdmissionRecord>,
    pub imputer: MedianImputer,
    pub n_raw: usize,
    pub n_filtered: usize,
}

impl PreparedCohort {
    pub fn subjects_overlap(&self) -> bool {
        let a: BTreeSet<&str> = self.train.iter().map(|r| r.subject_id.as_str()).collect();
        self.val.iter().any(|r| a.contains(r.subject_id.as_str()))
    }
}

/// filter → split → impute, with the imputer fitted on the training side only.
pub fn prepare_cohort(
    records: &[AdmissionRecord],
    max_missing: f64,
    mode: SplitMode,
    val_frac: f64,
    seed: u64,
) -> Result<PreparedCohort, CohortError> {
    let kept = filter_missingness(records, max_missing);
    let (train, val) = split(&kept, mode, val_frac, seed);
    let imputer = MedianImputer::fit(&train)?;
    Ok(PreparedCohort {
        train: imputer.apply(&train),
        val: imputer.apply(&val),
        imputer,
        n_raw: records.len(),
        n_filtered: kept.len(),
    })
}
