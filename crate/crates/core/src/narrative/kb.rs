use serde::{Deserialize, Serialize};

use super::NarrativeError;
use crate::cohort::Feature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    Abnormal,
    Severe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Normal,
    Abnormal,
    Severe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl Comparator {
    pub fn holds(self, x: f64, t: f64) -> bool {
        match self {
            Comparator::Lt => x < t,
            Comparator::Le => x <= t,
            Comparator::Gt => x > t,
            Comparator::Ge => x >= t,
            Comparator::Eq => x == t,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "≤",
            Comparator::Gt => ">",
            Comparator::Ge => "≥",
            Comparator::Eq => "=",
        }
    }
}

/// Which side of the scale carries risk. `Use` is for binary drug flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RiskDirection {
    High,
    Low,
    Both,
    Use,
}

/// Side of the threshold the value fell on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Deviation {
    High,
    Low,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub op: Comparator,
    pub value: f64,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub feature: String,
    pub unit: String,
    #[serde(default)]
    pub normal_range: Option<[f64; 2]>,
    pub thresholds: Vec<Threshold>,
    pub risk_direction: RiskDirection,
    pub note: String,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub status: Status,
    pub deviation: Deviation,
}

impl Classification {
    /// Status word used in rendered text.
    pub fn phrase(self, direction: RiskDirection) -> &'static str {
        match (direction, self.status, self.deviation) {
            (RiskDirection::Use, Status::Normal, _) => "not administered",
            (RiskDirection::Use, _, _) => "administered",
            (_, Status::Normal, _) => "within normal range",
            (_, Status::Abnormal, Deviation::Low) => "low",
            (_, Status::Abnormal, _) => "elevated",
            (_, Status::Severe, Deviation::Low) => "severely low",
            (_, Status::Severe, _) => "severely elevated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub schema_version: u32,
    pub entries: Vec<KbEntry>,
}

impl KnowledgeBase {
    /// The bundled threshold table.
    pub fn builtin() -> Self {
        Self::from_json(include_str!("../../data/knowledge_base.json")).expect("bundled knowledge base is valid")
    }

    pub fn from_json(s: &str) -> Result<Self, NarrativeError> {
        let kb: KnowledgeBase =
            serde_json::from_str(s).map_err(|e| NarrativeError::Format(format!("knowledge base: {e}")))?;
        kb.validate()?;
        Ok(kb)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NarrativeError> {
        let s = std::fs::read_to_string(path).map_err(|e| NarrativeError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn get(&self, feature: &str) -> Option<&KbEntry> {
        self.entries.iter().find(|e| e.feature == feature)
    }

    pub fn validate(&self) -> Result<(), NarrativeError> {
        let bad = |f: &str, why: &str| Err(NarrativeError::Format(format!("knowledge base entry {f}: {why}")));
        for (i, e) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|o| o.feature == e.feature) {
                return bad(&e.feature, "duplicate feature");
            }
            if e.thresholds.is_empty() {
                return bad(&e.feature, "no thresholds");
            }
            if e.thresholds.windows(2).any(|w| w[0].severity > w[1].severity) {
                return bad(&e.feature, "thresholds not ordered by severity");
            }
            for t in &e.thresholds {
                let ok = match e.risk_direction {
                    RiskDirection::High => matches!(t.op, Comparator::Gt | Comparator::Ge),
                    RiskDirection::Low => matches!(t.op, Comparator::Lt | Comparator::Le),
                    RiskDirection::Both => t.op != Comparator::Eq,
                    RiskDirection::Use => t.op == Comparator::Eq,
                };
                if !ok || !t.value.is_finite() {
                    return bad(&e.feature, "comparator does not match risk_direction");
                }
            }
        }
        Ok(())
    }

    /// One line per feature: thresholds and the interpretive note.
    pub fn describe(&self, feature: Feature) -> Option<String> {
        let e = self.get(feature.key())?;
        if e.risk_direction == RiskDirection::Use {
            return Some(format!("{}: use is abnormal. {}", feature.label(), e.note));
        }
        let rules: Vec<String> = e
            .thresholds
            .iter()
            .map(|t| {
                let sev = match t.severity {
                    Severity::Abnormal => "abnormal",
                    Severity::Severe => "severe",
                };
                format!(
                    "{} {} {} {sev}",
                    t.op.symbol(),
                    crate::util::format_value(t.value),
                    e.unit
                )
            })
            .collect();
        Some(format!("{}: {}. {}", feature.label(), rules.join("; "), e.note))
    }
}

/// The most severe satisfied threshold decides; the first one listed wins a
/// tie. Nothing satisfied means `Normal`.
pub fn classify_feature_status(name: &str, value: f64, kb: &KnowledgeBase) -> Result<Classification, NarrativeError> {
    let entry = kb
        .get(name)
        .ok_or_else(|| NarrativeError::UnknownFeature(name.to_string()))?;
    let mut best: Option<&Threshold> = None;
    for t in &entry.thresholds {
        if t.op.holds(value, t.value) && best.is_none_or(|b| t.severity > b.severity) {
            best = Some(t);
        }
    }
    Ok(match best {
        None => Classification {
            status: Status::Normal,
            deviation: Deviation::None,
        },
        Some(t) => Classification {
            status: match t.severity {
                Severity::Abnormal => Status::Abnormal,
                Severity::Severe => Status::Severe,
            },
            deviation: match t.op {
                Comparator::Lt | Comparator::Le => Deviation::Low,
                _ => Deviation::High,
            },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::FEATURES;

    fn status(name: &str, v: f64) -> Status {
        classify_feature_status(name, v, &KnowledgeBase::builtin())
            .unwrap()
            .status
    }

    #[test]
    fn examples() {
        assert_eq!(status("bun_min", 50.0), Status::Abnormal);
        assert_eq!(status("anion_gap_max", 21.0), Status::Severe);
        assert_eq!(status("norepinephrine", 0.0), Status::Normal);
        assert_eq!(status("norepinephrine", 1.0), Status::Abnormal);
        let kb = KnowledgeBase::builtin();
        let c = classify_feature_status("spo2_min", 85.0, &kb).unwrap();
        assert_eq!(c.deviation, Deviation::Low);
        assert_eq!(c.phrase(RiskDirection::Low), "low");
        assert_eq!(
            classify_feature_status("lactate", 3.0, &kb),
            Err(NarrativeError::UnknownFeature("lactate".into()))
        );
    }

    #[test]
    fn covers_every_feature() {
        let kb = KnowledgeBase::builtin();
        for f in FEATURES {
            assert!(kb.get(f.key()).is_some(), "{}", f.key());
            assert!(kb.describe(f).is_some());
        }
    }

    #[test]
    fn rejects_inconsistent_comparators() {
        let mut kb = KnowledgeBase::builtin();
        kb.entries[4].thresholds[0].op = Comparator::Le;
        assert!(kb.validate().is_err());
        let mut kb = KnowledgeBase::builtin();
        kb.entries[2].thresholds.swap(0, 1);
        assert!(kb.validate().is_err());
    }
}
