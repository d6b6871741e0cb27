use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdmissionRecord, CohortError, Feature, FEATURES, SCHEMA_VERSION};
use crate::ontology::{ConceptGraph, ConceptId};
use crate::util::{rng_for, sigmoid};

const DEFAULT_SPEC: &str = include_str!("../../data/cohort_spec.json");

const STREAM_RECORD: u64 = 1;

/// Marginal of one feature. Binary features use `mean` as the prevalence and
/// ignore `sd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistribution {
    pub mean: f64,
    pub sd: f64,
    pub missing_rate: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl FeatureDistribution {
    fn scale(&self, binary: bool) -> f64 {
        if binary {
            (self.mean * (1.0 - self.mean)).sqrt().max(1e-12)
        } else {
            self.sd.max(1e-12)
        }
    }
}

/// How the outcome depends on the features and codes.
///
/// `logit(p) = c + Σ beta_f·z_f + share_coef·(share − 0.5) + burden_coef·(n_high − mean_codes/2)`
/// where `z_f` is the feature standardised by its marginal, `share` is the
/// fraction of a stay's codes drawn under high-risk anchors, `n_high` their
/// count and `c` is solved so the expected mortality matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub beta: BTreeMap<Feature, f64>,
    pub high_risk_anchors: Vec<ConceptId>,
    pub low_risk_anchors: Vec<ConceptId>,
    pub mean_codes: f64,
    /// Gamma shape of the per-stay code rate; the code count is
    /// Poisson(rate) with `E[rate] = mean_codes`, so smaller values spread
    /// counts wider.
    pub code_count_shape: f64,
    pub codeless_rate: f64,
    pub share_coef: f64,
    pub burden_coef: f64,
    /// Share of stays that lose 6 to 10 features at once.
    pub record_dropout_rate: f64,
    pub label_missing_rate: f64,
    pub repeat_subject_prob: f64,
    pub notes_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    #[serde(default = "super::default_schema")]
    pub schema_version: u32,
    pub n: usize,
    pub mortality_rate: f64,
    pub features: BTreeMap<Feature, FeatureDistribution>,
    pub signal: SignalSpec,
}

impl Default for CohortSpec {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_SPEC).expect("bundled cohort spec parses")
    }
}

impl CohortSpec {
    pub fn from_json(text: &str) -> Result<Self, CohortError> {
        let spec: CohortSpec = serde_json::from_str(text).map_err(|e| CohortError::Parse {
            line: e.line(),
            reason: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, CohortError> {
        let text = std::fs::read_to_string(path).map_err(|e| CohortError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises")
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        let bad = |s: String| Err(CohortError::InvalidSpec(s));
        if self.schema_version != SCHEMA_VERSION {
            return bad("schema_version".into());
        }
        if self.n == 0 {
            return bad("n".into());
        }
        if !(self.mortality_rate > 0.0 && self.mortality_rate < 1.0) {
            return bad("mortality_rate".into());
        }
        for f in FEATURES {
            let Some(d) = self.features.get(&f) else {
                return bad(format!("features.{f}"));
            };
            let field = |name: &str| format!("features.{f}.{name}");
            if !(0.0..0.9).contains(&d.missing_rate) {
                return bad(field("missing_rate"));
            }
            if !(d.clip_lo < d.clip_hi) {
                return bad(field("clip_lo"));
            }
            if !d.mean.is_finite() {
                return bad(field("mean"));
            }
            if f.is_binary() {
                if !(0.0..=1.0).contains(&d.mean) {
                    return bad(field("mean"));
                }
            } else if !(d.sd >= 0.0 && d.sd.is_finite()) {
                return bad(field("sd"));
            }
        }
        let s = &self.signal;
        let rate = |v: f64| (0.0..=1.0).contains(&v);
        if !(s.mean_codes >= 0.0 && s.mean_codes.is_finite()) {
            return bad("signal.mean_codes".into());
        }
        if !(s.code_count_shape > 0.0 && s.code_count_shape.is_finite()) {
            return bad("signal.code_count_shape".into());
        }
        for (name, v) in [
            ("codeless_rate", s.codeless_rate),
            ("record_dropout_rate", s.record_dropout_rate),
            ("label_missing_rate", s.label_missing_rate),
            ("repeat_subject_prob", s.repeat_subject_prob),
            ("notes_rate", s.notes_rate),
        ] {
            if !rate(v) {
                return bad(format!("signal.{name}"));
            }
        }
        if !s.share_coef.is_finite() || !s.burden_coef.is_finite() || s.beta.values().any(|b| !b.is_finite()) {
            return bad("signal.coefficients".into());
        }
        if s.high_risk_anchors.is_empty() {
            return bad("signal.high_risk_anchors".into());
        }
        if s.low_risk_anchors.is_empty() {
            return bad("signal.low_risk_anchors".into());
        }
        Ok(())
    }
}

const NOTE_PHRASES: [&str; 8] = [
    "Transferred from the emergency department overnight.",
    "Family updated at bedside.",
    "Seen by the cardiology consult team.",
    "Echocardiogram requested for the morning.",
    "Diuresis plan discussed on rounds.",
    "Daily weights ordered.",
    "Social work involved for discharge planning.",
    "Goals of care conversation scheduled.",
];

struct Draft {
    features: BTreeMap<Feature, Option<f64>>,
    codes: Vec<ConceptId>,
    lin: f64,
    label_missing: bool,
    repeat: Option<usize>,
    notes: Option<String>,
    u_label: f64,
}

fn anchor_pool(graph: &ConceptGraph, anchors: &[ConceptId], field: &str) -> Result<Vec<Vec<ConceptId>>, CohortError> {
    anchors
        .iter()
        .map(|a| {
            if !graph.contains(a) {
                return Err(CohortError::InvalidSpec(format!("signal.{field}")));
            }
            Ok(graph.descendants_or_self(a).into_iter().collect())
        })
        .collect()
}

/// Draw `spec.n` synthetic stays. Each record is generated from its own
/// seeded stream, so the output depends only on `(spec, graph, seed)`.
pub fn generate_cohort(
    spec: &CohortSpec,
    graph: &ConceptGraph,
    seed: u64,
) -> Result<Vec<AdmissionRecord>, CohortError> {
    spec.validate()?;
    let sig = &spec.signal;
    let high = anchor_pool(graph, &sig.high_risk_anchors, "high_risk_anchors")?;
    let low = anchor_pool(graph, &sig.low_risk_anchors, "low_risk_anchors")?;
    let rate = (sig.mean_codes > 0.0)
        .then(|| Gamma::new(sig.code_count_shape, sig.mean_codes / sig.code_count_shape).expect("positive shape"));
    let beta_share = Beta::new(2.0, 2.0).expect("valid beta");

    let drafts: Vec<Draft> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, &[STREAM_RECORD, i as u64]);
            let mut z_tab = 0.0;
            let mut features = BTreeMap::new();
            let mut values = Vec::with_capacity(FEATURES.len());
            for f in FEATURES {
                let d = spec.features[&f];
                let v = if f.is_binary() {
                    if rng.random::<f64>() < d.mean {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    let n: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
                    (d.mean + d.sd * n).clamp(d.clip_lo, d.clip_hi)
                };
                if let Some(b) = sig.beta.get(&f) {
                    z_tab += b * (v - d.mean) / d.scale(f.is_binary());
                }
                values.push(v);
            }
            // paired min/max measurements stay ordered
            for (lo, hi) in [
                (Feature::AnionGapMin, Feature::AnionGapMax),
                (Feature::InrMin, Feature::InrMax),
            ] {
                let (a, b) = (lo.index(), hi.index());
                if values[a] > values[b] {
                    values.swap(a, b);
                }
            }
            let dropped: BTreeSet<usize> = if rng.random::<f64>() < sig.record_dropout_rate {
                let k = rng.random_range(6..=10);
                rand::seq::index::sample(&mut rng, FEATURES.len(), k)
                    .into_iter()
                    .collect()
            } else {
                BTreeSet::new()
            };
            for (j, f) in FEATURES.iter().enumerate() {
                let missing = dropped.contains(&j) || rng.random::<f64>() < spec.features[f].missing_rate;
                features.insert(*f, (!missing).then_some(values[j]));
            }

            let mut codes = Vec::new();
            let mut n_high = 0usize;
            if rng.random::<f64>() >= sig.codeless_rate {
                let k = match &rate {
                    Some(g) => {
                        let lambda: f64 = g.sample(&mut rng);
                        if lambda > 0.0 {
                            Poisson::new(lambda).map_or(0, |p| p.sample(&mut rng) as usize)
                        } else {
                            0
                        }
                    }
                    None => 0,
                }
                .max(1);
                let share: f64 = beta_share.sample(&mut rng);
                for _ in 0..k {
                    let is_high = rng.random::<f64>() < share;
                    let pool = if is_high { &high } else { &low };
                    let anchor = pool.choose(&mut rng).expect("non-empty pool");
                    codes.push(anchor.choose(&mut rng).expect("anchor has itself").clone());
                    n_high += usize::from(is_high);
                }
            }
            let realised = if codes.is_empty() {
                0.5
            } else {
                n_high as f64 / codes.len() as f64
            };
            let z_onto = sig.share_coef * (realised - 0.5) + sig.burden_coef * (n_high as f64 - sig.mean_codes / 2.0);

            let label_missing = rng.random::<f64>() < sig.label_missing_rate;
            let repeat = (i > 0 && rng.random::<f64>() < sig.repeat_subject_prob).then(|| rng.random_range(0..i));
            let notes = (rng.random::<f64>() < sig.notes_rate).then(|| {
                let k = rng.random_range(1..=3);
                NOTE_PHRASES
                    .choose_multiple(&mut rng, k)
                    .copied()
                    .collect::<Vec<_>>()
                    .join(" ")
            });
            Draft {
                features,
                codes,
                lin: z_tab + z_onto,
                label_missing,
                repeat,
                notes,
                u_label: rng.random::<f64>(),
            }
        })
        .collect();

    let intercept = solve_intercept(drafts.iter().map(|d| d.lin), spec.mortality_rate);

    let mut subjects: Vec<usize> = Vec::with_capacity(spec.n);
    let mut next_subject = 0usize;
    let width = spec.n.to_string().len().max(5);
    let records = drafts
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let subject = match d.repeat {
                Some(j) => subjects[j],
                None => {
                    next_subject += 1;
                    next_subject
                }
            };
            subjects.push(subject);
            let p = sigmoid(intercept + d.lin);
            AdmissionRecord {
                schema_version: SCHEMA_VERSION,
                stay_id: format!("S{:0width$}", i + 1),
                subject_id: format!("P{subject:0width$}"),
                features: d.features,
                codes: d.codes,
                label: (!d.label_missing).then_some(u8::from(d.u_label < p)),
                notes: d.notes,
                imputed: BTreeSet::new(),
            }
        })
        .collect();
    Ok(records)
}

/// Intercept `c` with `mean(sigmoid(c + lin)) = target`, by bisection.
fn solve_intercept(lin: impl Iterator<Item = f64> + Clone, target: f64) -> f64 {
    let mean_p = |c: f64| {
        let (s, n) = lin.clone().fold((0.0, 0usize), |(s, n), l| (s + sigmoid(c + l), n + 1));
        s / n.max(1) as f64
    };
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
