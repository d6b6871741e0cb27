use std::collections::BTreeSet;

use super::index::Retrieved;
use super::kb::{classify_feature_status, KnowledgeBase, RiskDirection};
use crate::attribution::{Direction, DriverList, GroupEntry, GroupKind};
use crate::cohort::{AdmissionRecord, Feature, FEATURES};
use crate::util::format_value;

pub fn direction_phrase(d: Direction) -> &'static str {
    match d {
        Direction::RiskUp => "increases predicted risk",
        Direction::RiskDown => "decreases predicted risk",
        Direction::Neutral => "has no net effect on predicted risk",
    }
}

fn value_with_unit(f: Feature, v: f64, kb: &KnowledgeBase) -> String {
    match kb.get(f.key()) {
        Some(e) if e.risk_direction != RiskDirection::Use => format!("{} {}", format_value(v), e.unit),
        _ => format_value(v),
    }
}

fn status_phrase(f: Feature, v: f64, kb: &KnowledgeBase) -> &'static str {
    match (classify_feature_status(f.key(), v, kb), kb.get(f.key())) {
        (Ok(c), Some(e)) => c.phrase(e.risk_direction),
        _ => "status unavailable",
    }
}

fn driver_line(d: &GroupEntry, imputed: &BTreeSet<Feature>, kb: &KnowledgeBase) -> String {
    let dir = direction_phrase(d.direction);
    match d.group {
        GroupKind::Tabular => {
            let f = Feature::from_key(&d.key);
            match (f, d.value) {
                (Some(f), Some(v)) => {
                    let mark = if imputed.contains(&f) { " (imputed)" } else { "" };
                    format!(
                        "- {}: {}{mark}, {}; {dir}.",
                        d.name,
                        value_with_unit(f, v, kb),
                        status_phrase(f, v, kb)
                    )
                }
                _ => format!("- {}: value unavailable (imputed); {dir}.", d.name),
            }
        }
        GroupKind::Ontology => {
            let n = d.value.unwrap_or(0.0);
            let noun = if n == 1.0 { "related code" } else { "related codes" };
            format!("- {} (ontology category): {} {noun}; {dir}.", d.name, format_value(n))
        }
        GroupKind::Embedding => format!("- {} (latent concept context): {dir}.", d.name),
    }
}

/// One line per driver, in ranking order. Deterministic.
pub fn build_driver_section(drivers: &DriverList, imputed: &BTreeSet<Feature>, kb: &KnowledgeBase) -> String {
    drivers
        .drivers
        .iter()
        .map(|d| driver_line(d, imputed, kb))
        .collect::<Vec<_>>()
        .join("\n")
}

/// All 18 tabular values with status words.
pub fn build_tabular_section(record: &AdmissionRecord, kb: &KnowledgeBase) -> String {
    FEATURES
        .iter()
        .map(|&f| match record.get(f) {
            Some(v) => {
                let mark = if record.imputed.contains(&f) { ", imputed" } else { "" };
                format!(
                    "- {}: {} ({}{mark})",
                    f.label(),
                    value_with_unit(f, v, kb),
                    status_phrase(f, v, kb)
                )
            }
            None => format!("- {}: missing", f.label()),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Threshold lines for the tabular drivers.
pub fn build_knowledge_section(drivers: &DriverList, kb: &KnowledgeBase) -> String {
    drivers
        .drivers
        .iter()
        .filter_map(|d| Feature::from_key(&d.key))
        .filter_map(|f| kb.describe(f))
        .map(|s| format!("- {s}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_evidence_section(hits: &[Retrieved]) -> String {
    hits.iter()
        .map(|h| format!("- {}", h.doc.text))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::rank_drivers;
    use crate::attribution::GroupedAttribution;

    fn entry(key: &str, value: f64, phi: f64) -> GroupEntry {
        let f = Feature::from_key(key).unwrap();
        GroupEntry {
            group: GroupKind::Tabular,
            key: key.into(),
            name: f.label().into(),
            value: Some(value),
            phi,
            direction: Direction::of(phi),
            column: f.index(),
        }
    }

    fn list(entries: Vec<GroupEntry>) -> DriverList {
        let n = entries.len();
        rank_drivers(
            &GroupedAttribution {
                phi0: 0.0,
                fx: 0.0,
                entries,
            },
            n,
        )
    }

    #[test]
    fn bun_line() {
        let kb = KnowledgeBase::builtin();
        let text = build_driver_section(&list(vec![entry("bun_min", 50.0, 0.4)]), &BTreeSet::new(), &kb);
        for part in ["BUN", "50", "elevated", "increases predicted risk"] {
            assert!(text.contains(part), "{text}");
        }
        assert!(!text.contains("(imputed)"));
    }

    #[test]
    fn imputed_and_drugs() {
        let kb = KnowledgeBase::builtin();
        let drivers = list(vec![
            entry("sbp", 78.0, 0.3),
            entry("norepinephrine", 1.0, 0.2),
            entry("age", 40.0, -0.1),
        ]);
        let imputed: BTreeSet<Feature> = [Feature::Sbp].into();
        let text = build_driver_section(&drivers, &imputed, &kb);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "- SBP: 78 mmHg (imputed), severely low; increases predicted risk."
        );
        assert_eq!(lines[1], "- Norepinephrine: 1, administered; increases predicted risk.");
        assert_eq!(
            lines[2],
            "- Age: 40 years, within normal range; decreases predicted risk."
        );
        assert_eq!(text, build_driver_section(&drivers, &imputed, &kb));
    }
}
