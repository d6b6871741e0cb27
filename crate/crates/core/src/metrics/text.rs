use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::attribution::{Direction, DriverList, GroupKind};
use crate::cohort::Feature;
use crate::narrative::{
    classify_feature_status, extract_claims, Claim, ClaimedStatus, KnowledgeBase, Lexicon, RiskDirection, Status,
};

/// Share of the drivers' |φ| mass whose key is in `mentions`. With zero
/// total mass the share of drivers mentioned is returned instead.
pub fn shap_mass_coverage(drivers: &DriverList, mentions: &BTreeSet<String>) -> Result<f64, MetricsError> {
    if drivers.drivers.is_empty() {
        return Err(MetricsError::EmptyTopK);
    }
    let total: f64 = drivers.drivers.iter().map(|d| d.phi.abs()).sum();
    let hit = |d: &&crate::attribution::GroupEntry| mentions.contains(&d.key);
    if total == 0.0 {
        let n = drivers.drivers.iter().filter(hit).count();
        return Ok(n as f64 / drivers.drivers.len() as f64);
    }
    Ok(drivers.drivers.iter().filter(hit).map(|d| d.phi.abs()).sum::<f64>() / total)
}

/// A driver the narrative must name, quote and give a direction for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequiredItem {
    pub feature: Feature,
    pub value: f64,
    pub direction: Direction,
}

/// Tabular drivers with a known value.
pub fn required_items(drivers: &DriverList) -> Vec<RequiredItem> {
    drivers
        .drivers
        .iter()
        .filter(|d| d.group == GroupKind::Tabular)
        .filter_map(|d| {
            Some(RequiredItem {
                feature: Feature::from_key(&d.key)?,
                value: d.value?,
                direction: d.direction,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    /// Share of items with name, value and direction all present.
    pub score: f64,
    pub c_name: f64,
    pub c_value: f64,
    pub c_dir: f64,
    pub n: usize,
}

fn value_matches(item: &RequiredItem, c: &Claim) -> bool {
    let numeric = c
        .value
        .is_some_and(|v| (v - item.value).abs() <= 0.01 * item.value.abs() + 1e-9);
    let worded = item.feature.is_binary()
        && match c.status {
            Some(ClaimedStatus::Administered) => item.value == 1.0,
            Some(ClaimedStatus::NotAdministered) => item.value == 0.0,
            _ => false,
        };
    numeric || worded
}

/// Name by lexicon, value within 1% relative tolerance, direction by
/// keyword. A contradicting direction anywhere fails the item.
pub fn narrative_completeness(
    items: &[RequiredItem],
    text: &str,
    lexicon: &Lexicon,
) -> Result<CompletenessReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyTopK);
    }
    let claims = extract_claims(text, lexicon);
    let (mut names, mut values, mut dirs, mut full) = (0usize, 0usize, 0usize, 0usize);
    for item in items {
        let mine: Vec<&Claim> = claims.iter().filter(|c| c.feature == item.feature).collect();
        let name = !mine.is_empty();
        let value = mine.iter().any(|c| value_matches(item, c));
        let stated: Vec<Direction> = mine.iter().filter_map(|c| c.direction).collect();
        let dir = !stated.is_empty() && stated.iter().all(|d| *d == item.direction);
        names += usize::from(name);
        values += usize::from(value);
        dirs += usize::from(dir);
        full += usize::from(name && value && dir);
    }
    let n = items.len() as f64;
    Ok(CompletenessReport {
        score: full as f64 / n,
        c_name: names as f64 / n,
        c_value: values as f64 / n,
        c_dir: dirs as f64 / n,
        n: items.len(),
    })
}

/// 1.0 agreement, 0.6 partial credit, 0.5 neutral mention, 0.0 contradiction.
pub fn score_claim(claim: &Claim, kb: &KnowledgeBase) -> f64 {
    let (Some(status), Some(v)) = (claim.status, claim.value) else {
        return 0.5;
    };
    let Some(entry) = kb.get(claim.feature.key()) else {
        return 0.5;
    };
    let Ok(c) = classify_feature_status(claim.feature.key(), v, kb) else {
        return 0.5;
    };
    let expected = match (entry.risk_direction, c.status, c.deviation) {
        (RiskDirection::Use, Status::Normal, _) => ClaimedStatus::NotAdministered,
        (RiskDirection::Use, _, _) => ClaimedStatus::Administered,
        (_, Status::Normal, _) => ClaimedStatus::Normal,
        (_, _, crate::narrative::Deviation::Low) => ClaimedStatus::Low,
        _ => ClaimedStatus::High,
    };
    if status == expected {
        let dir_ok = match claim.direction {
            None => false,
            Some(d) if c.status == Status::Normal => d != Direction::RiskUp,
            Some(d) => d == Direction::RiskUp,
        };
        return if dir_ok { 1.0 } else { 0.6 };
    }
    // outside the reference range but short of the risk threshold
    let off_range = match (status, entry.normal_range) {
        (ClaimedStatus::High, Some([_, hi])) => v > hi,
        (ClaimedStatus::Low, Some([lo, _])) => v < lo,
        _ => false,
    };
    if off_range && c.status == Status::Normal {
        0.6
    } else {
        0.0
    }
}

pub fn clinical_plausibility(claims: &[Claim], kb: &KnowledgeBase) -> Result<f64, MetricsError> {
    if claims.is_empty() {
        return Err(MetricsError::NoClaims);
    }
    Ok(claims.iter().map(|c| score_claim(c, kb)).sum::<f64>() / claims.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{rank_drivers, GroupEntry, GroupedAttribution};

    fn drivers(phis: &[(&str, f64)]) -> DriverList {
        let entries = phis
            .iter()
            .map(|(k, p)| GroupEntry {
                group: GroupKind::Tabular,
                key: k.to_string(),
                name: k.to_string(),
                value: Some(1.0),
                phi: *p,
                direction: Direction::of(*p),
                column: 0,
            })
            .collect();
        rank_drivers(
            &GroupedAttribution {
                phi0: 0.0,
                fx: 0.0,
                entries,
            },
            10,
        )
    }

    #[test]
    fn mass_coverage_examples() {
        let d = drivers(&[("a", 0.5), ("b", -0.3), ("c", 0.2)]);
        let m = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        assert!((shap_mass_coverage(&d, &m(&["a", "b"])).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(shap_mass_coverage(&d, &m(&["a", "b", "c"])).unwrap(), 1.0);
        assert_eq!(shap_mass_coverage(&d, &m(&[])).unwrap(), 0.0);
        assert_eq!(
            shap_mass_coverage(&drivers(&[]), &m(&["a"])),
            Err(MetricsError::EmptyTopK)
        );
    }

    fn item(f: Feature, v: f64, d: Direction) -> RequiredItem {
        RequiredItem {
            feature: f,
            value: v,
            direction: d,
        }
    }

    #[test]
    fn completeness_conjunction() {
        let lex = Lexicon::builtin();
        let items = [
            item(Feature::BunMin, 50.0, Direction::RiskUp),
            item(Feature::Sbp, 85.0, Direction::RiskUp),
            item(Feature::Age, 70.0, Direction::RiskUp),
        ];
        let text = "BUN 50.2 mg/dL increases predicted risk. SBP 85 mmHg raises risk. Age 70 lowers risk.";
        let r = narrative_completeness(&items, text, &lex).unwrap();
        assert!((r.score - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((r.c_name, r.c_value), (1.0, 1.0));
        assert!((r.c_dir - 2.0 / 3.0).abs() < 1e-12);
        let all = "BUN 50 increases risk. SBP 85 increases risk. Age 70 increases risk.";
        assert_eq!(narrative_completeness(&items, all, &lex).unwrap().score, 1.0);
        // 1% tolerance
        assert_eq!(
            narrative_completeness(&items[..1], "BUN 51 increases risk", &lex)
                .unwrap()
                .c_value,
            0.0
        );
    }

    #[test]
    fn plausibility_examples() {
        let kb = KnowledgeBase::builtin();
        let lex = Lexicon::builtin();
        let c = extract_claims("BUN 50 elevated, raises risk.", &lex);
        assert_eq!(score_claim(&c[0], &kb), 1.0);
        let c = extract_claims("SpO2 85 is reassuring.", &lex);
        assert_eq!(score_claim(&c[0], &kb), 0.0);
        let c = extract_claims("BUN 50 elevated. Heart rate was discussed.", &lex);
        assert_eq!(clinical_plausibility(&c, &kb).unwrap(), (0.6 + 0.5) / 2.0);
        let c = extract_claims("BUN 50 elevated, raises risk. Heart rate 90.", &lex);
        assert_eq!(clinical_plausibility(&c, &kb).unwrap(), 0.75);
        assert_eq!(clinical_plausibility(&[], &kb), Err(MetricsError::NoClaims));
        // above the reference range, below the risk threshold
        let c = extract_claims("BUN 30 elevated, raises risk.", &lex);
        assert_eq!(score_claim(&c[0], &kb), 0.6);
    }
}
