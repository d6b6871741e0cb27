use serde::{Deserialize, Serialize};

use super::{AttributionError, AttributionVector};
use crate::cohort::{ColumnGroup, ColumnLayout, EMBEDDING_DRIVER_NAME};
use crate::ontology::ConceptGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GroupKind {
    Tabular,
    Ontology,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    RiskUp,
    RiskDown,
    Neutral,
}

impl Direction {
    pub fn of(phi: f64) -> Self {
        if phi > 0.0 {
            Direction::RiskUp
        } else if phi < 0.0 {
            Direction::RiskDown
        } else {
            Direction::Neutral
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Direction::RiskUp => "UP",
            Direction::RiskDown => "DOWN",
            Direction::Neutral => "NEUTRAL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub group: GroupKind,
    /// Machine key: feature key, `onto_<id>` or `kg_embedding`.
    pub key: String,
    /// Display name.
    pub name: String,
    /// Observed value in raw units; `None` for the embedding block.
    pub value: Option<f64>,
    pub phi: f64,
    pub direction: Direction,
    /// First column of the entry in the layout.
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedAttribution {
    pub phi0: f64,
    pub fx: f64,
    pub entries: Vec<GroupEntry>,
}

impl GroupedAttribution {
    /// Replace ontology display names with concept terms.
    pub fn name_anchors(&mut self, graph: &ConceptGraph) {
        for e in &mut self.entries {
            if e.group == GroupKind::Ontology {
                if let Some(id) = e.key.strip_prefix("onto_") {
                    if let Some(term) = graph.term(&id.into()) {
                        e.name = term.to_string();
                    }
                }
            }
        }
    }
}

/// Sum the embedding dimensions into one entry, label the rest by group and
/// sort by |φ| (stable, so ties keep column order). `raw` supplies display
/// values in original units.
pub fn collapse_and_group(
    attr: &AttributionVector,
    layout: &ColumnLayout,
    raw: Option<&[f64]>,
) -> Result<GroupedAttribution, AttributionError> {
    if layout.len() != attr.phi.len() {
        return Err(AttributionError::LayoutMismatch {
            layout: layout.len(),
            attr: attr.phi.len(),
        });
    }
    if let Some(r) = raw {
        if r.len() != layout.len() {
            return Err(AttributionError::LayoutMismatch {
                layout: layout.len(),
                attr: r.len(),
            });
        }
    }
    let mut entries: Vec<GroupEntry> = Vec::new();
    let mut emb: Option<usize> = None;
    for (j, col) in layout.columns.iter().enumerate() {
        let phi = attr.phi[j];
        let value = raw.map(|r| r[j]);
        match &col.group {
            ColumnGroup::Tabular(f) => entries.push(GroupEntry {
                group: GroupKind::Tabular,
                key: f.key().to_string(),
                name: f.label().to_string(),
                value,
                phi,
                direction: Direction::Neutral,
                column: j,
            }),
            ColumnGroup::OntologyCount(id) => entries.push(GroupEntry {
                group: GroupKind::Ontology,
                key: col.name.clone(),
                name: id.to_string(),
                value,
                phi,
                direction: Direction::Neutral,
                column: j,
            }),
            ColumnGroup::Embedding(_) => match emb {
                Some(k) => entries[k].phi += phi,
                None => {
                    emb = Some(entries.len());
                    entries.push(GroupEntry {
                        group: GroupKind::Embedding,
                        key: EMBEDDING_DRIVER_NAME.to_string(),
                        name: "Knowledge-graph embedding".to_string(),
                        value: None,
                        phi,
                        direction: Direction::Neutral,
                        column: j,
                    });
                }
            },
        }
    }
    for e in &mut entries {
        e.direction = Direction::of(e.phi);
    }
    entries.sort_by(|a, b| b.phi.abs().total_cmp(&a.phi.abs()));
    Ok(GroupedAttribution {
        phi0: attr.phi0,
        fx: attr.fx,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverList {
    pub drivers: Vec<GroupEntry>,
    pub tokens: Vec<String>,
}

impl DriverList {
    pub fn keys(&self) -> Vec<&str> {
        self.drivers.iter().map(|d| d.key.as_str()).collect()
    }
}

/// The `k` largest entries (already ordered by [`collapse_and_group`]) and
/// their `DRIVER:<key>:<UP|DOWN|NEUTRAL>` tokens.
pub fn rank_drivers(g: &GroupedAttribution, k: usize) -> DriverList {
    let k = k.max(1);
    let drivers: Vec<GroupEntry> = g.entries.iter().take(k).cloned().collect();
    let tokens = drivers
        .iter()
        .map(|d| format!("DRIVER:{}:{}", d.key, d.direction.token()))
        .collect();
    DriverList { drivers, tokens }
}
