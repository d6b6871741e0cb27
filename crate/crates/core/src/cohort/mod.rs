//! Synthetic heart-failure ICU cohort and the data-transformation rules that
//! turn admissions into model-ready feature matrices.
//!
//! Stage order is fixed: [`filter_missingness`] → [`split`] →
//! [`MedianImputer`] (fit on train) → [`assemble_features`] → [`Scaler`]
//! (fit on train, applied inside each predictor). [`prepare_cohort`] runs the
//! first three so no statistic ever sees validation rows.

mod features;
mod generate;
mod transform;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::ConceptId;

pub use features::{
    assemble_features, Column, ColumnGroup, ColumnLayout, FeatureConfig, FeatureContext, FeatureMatrix,
    EMBEDDING_DRIVER_NAME,
};
pub use generate::{generate_cohort, CohortSpec, FeatureDistribution, SignalSpec};
pub use transform::{
    filter_missingness, impute_median, prepare_cohort, scale, split, MedianImputer, PreparedCohort, ScaleMode, Scaler,
    ScalerParams, SplitMode, DEFAULT_MAX_MISSING,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("invalid cohort spec field `{0}`")]
    InvalidSpec(String),
    #[error("feature `{0}` has no observed value in the training rows")]
    AllMissingFeature(String),
    #[error("feature configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("admissions file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

/// The 18 tabular predictors, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Age,
    WbcMin,
    AnionGapMin,
    AnionGapMax,
    BunMin,
    InrMin,
    InrMax,
    PttMin,
    UrineOutput,
    HeartRate,
    Sbp,
    DbpMin,
    RespiratoryRate,
    Spo2Min,
    Dobutamine,
    Dopamine,
    Norepinephrine,
    Phenylephrine,
}

pub const FEATURES: [Feature; 18] = [
    Feature::Age,
    Feature::WbcMin,
    Feature::AnionGapMin,
    Feature::AnionGapMax,
    Feature::BunMin,
    Feature::InrMin,
    Feature::InrMax,
    Feature::PttMin,
    Feature::UrineOutput,
    Feature::HeartRate,
    Feature::Sbp,
    Feature::DbpMin,
    Feature::RespiratoryRate,
    Feature::Spo2Min,
    Feature::Dobutamine,
    Feature::Dopamine,
    Feature::Norepinephrine,
    Feature::Phenylephrine,
];

impl Feature {
    pub fn key(self) -> &'static str {
        match self {
            Feature::Age => "age",
            Feature::WbcMin => "wbc_min",
            Feature::AnionGapMin => "anion_gap_min",
            Feature::AnionGapMax => "anion_gap_max",
            Feature::BunMin => "bun_min",
            Feature::InrMin => "inr_min",
            Feature::InrMax => "inr_max",
            Feature::PttMin => "ptt_min",
            Feature::UrineOutput => "urine_output",
            Feature::HeartRate => "heart_rate",
            Feature::Sbp => "sbp",
            Feature::DbpMin => "dbp_min",
            Feature::RespiratoryRate => "respiratory_rate",
            Feature::Spo2Min => "spo2_min",
            Feature::Dobutamine => "dobutamine",
            Feature::Dopamine => "dopamine",
            Feature::Norepinephrine => "norepinephrine",
            Feature::Phenylephrine => "phenylephrine",
        }
    }

    /// Human-readable name used in narratives.
    pub fn label(self) -> &'static str {
        match self {
            Feature::Age => "Age",
            Feature::WbcMin => "WBC (min)",
            Feature::AnionGapMin => "Anion gap (min)",
            Feature::AnionGapMax => "Anion gap (max)",
            Feature::BunMin => "BUN (min)",
            Feature::InrMin => "INR (min)",
            Feature::InrMax => "INR (max)",
            Feature::PttMin => "PTT (min)",
            Feature::UrineOutput => "Urine output",
            Feature::HeartRate => "Heart rate",
            Feature::Sbp => "SBP",
            Feature::DbpMin => "DBP (min)",
            Feature::RespiratoryRate => "Respiratory rate",
            Feature::Spo2Min => "SpO2 (min)",
            Feature::Dobutamine => "Dobutamine",
            Feature::Dopamine => "Dopamine",
            Feature::Norepinephrine => "Norepinephrine",
            Feature::Phenylephrine => "Phenylephrine",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(
            self,
            Feature::Dobutamine | Feature::Dopamine | Feature::Norepinephrine | Feature::Phenylephrine
        )
    }

    pub fn index(self) -> usize {
        FEATURES.iter().position(|f| *f == self).expect("listed feature")
    }

    pub fn from_key(key: &str) -> Option<Feature> {
        FEATURES.iter().copied().find(|f| f.key() == key)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

/// One ICU stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub stay_id: String,
    pub subject_id: String,
    pub features: BTreeMap<Feature, Option<f64>>,
    #[serde(default)]
    pub codes: Vec<ConceptId>,
    /// 0 = alive, 1 = died; `None` when the outcome is unknown.
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    /// Features whose value was filled by imputation.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub imputed: BTreeSet<Feature>,
}

impl AdmissionRecord {
    pub fn get(&self, f: Feature) -> Option<f64> {
        self.features.get(&f).copied().flatten()
    }

    pub fn missing_count(&self) -> usize {
        FEATURES.iter().filter(|f| self.get(**f).is_none()).count()
    }

    /// Feature values in column order; `None` if any is missing.
    pub fn tabular_vector(&self) -> Option<Vec<f64>> {
        FEATURES.iter().map(|f| self.get(*f)).collect()
    }
}

pub fn write_admissions_jsonl(records: &[AdmissionRecord], path: &Path) -> Result<(), CohortError> {
    let mut f = fs::File::create(path).map_err(|e| CohortError::Io(e.to_string()))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| CohortError::Io(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| CohortError::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn read_admissions_jsonl(path: &Path) -> Result<Vec<AdmissionRecord>, CohortError> {
    let f = fs::File::open(path).map_err(|e| CohortError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CohortError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AdmissionRecord = serde_json::from_str(&line).map_err(|e| CohortError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(CohortError::Parse {
                line: i + 1,
                reason: format!("unsupported schema_version {}", rec.schema_version),
            });
        }
        if let Some(l) = rec.label {
            if l > 1 {
                return Err(CohortError::Parse {
                    line: i + 1,
                    reason: format!("label must be 0 or 1, got {l}"),
                });
            }
        }
        for f in FEATURES {
            if f.is_binary() {
                if let Some(v) = rec.get(f) {
                    if v != 0.0 && v != 1.0 {
                        return Err(CohortError::Parse {
                            line: i + 1,
                            reason: format!("{f} must be 0 or 1"),
                        });
                    }
                }
            }
        }
        out.push(rec);
    }
    Ok(out)
}
