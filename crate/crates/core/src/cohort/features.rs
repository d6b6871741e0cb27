use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AdmissionRecord, CohortError, Feature, FEATURES};
use crate::embeddings::{pool_admission, EmbeddingTable, WeightTable, EMBEDDING_DIM};
use crate::ontology::{category_counts, ConceptGraph, ConceptId, LevelMap};

/// Driver name used for the collapsed embedding block.
pub const EMBEDDING_DRIVER_NAME: &str = "kg_embedding";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureConfig {
    Tabular,
    TabularKg,
    Neurosymbolic,
}

impl FeatureConfig {
    pub const ALL: [FeatureConfig; 3] = [
        FeatureConfig::Tabular,
        FeatureConfig::TabularKg,
        FeatureConfig::Neurosymbolic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureConfig::Tabular => "TABULAR",
            FeatureConfig::TabularKg => "TABULAR_KG",
            FeatureConfig::Neurosymbolic => "NEUROSYMBOLIC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }

    pub fn uses_graph(self) -> bool {
        self != FeatureConfig::Tabular
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnGroup {
    Tabular(Feature),
    Embedding(usize),
    OntologyCount(ConceptId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub group: ColumnGroup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnLayout {
    pub columns: Vec<Column>,
}

impl ColumnLayout {
    pub fn for_config(config: FeatureConfig, levels: Option<&LevelMap>) -> Result<Self, CohortError> {
        let mut columns: Vec<Column> = FEATURES
            .iter()
            .map(|f| Column {
                name: f.key().to_string(),
                group: ColumnGroup::Tabular(*f),
            })
            .collect();
        if config.uses_graph() {
            columns.extend((0..EMBEDDING_DIM).map(|k| Column {
                name: format!("kg_emb_{k:02}"),
                group: ColumnGroup::Embedding(k),
            }));
        }
        if config == FeatureConfig::Neurosymbolic {
            let levels =
                levels.ok_or_else(|| CohortError::ConfigMismatch("NEUROSYMBOLIC needs anchor levels".into()))?;
            columns.extend(levels.anchors().into_iter().map(|a| Column {
                name: format!("onto_{a}"),
                group: ColumnGroup::OntologyCount(a),
            }));
        }
        Ok(Self { columns })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// Everything beyond the records that graph-aware configurations need.
#[derive(Debug, Clone, Copy)]
pub struct FeatureContext<'a> {
    pub emb: &'a EmbeddingTable,
    pub weights: &'a WeightTable,
    pub levels: &'a LevelMap,
    pub graph: &'a ConceptGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<String>,
    pub columns: ColumnLayout,
    pub values: Array2<f64>,
    pub labels: Vec<u8>,
    pub config: FeatureConfig,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).to_vec()
    }

    pub fn row_of(&self, stay_id: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == stay_id)
    }
}

/// Build the model matrix for `config`. Records must be imputed and
/// labelled. Stays without usable codes get zeros in the embedding and
/// count blocks.
pub fn assemble_features(
    records: &[AdmissionRecord],
    config: FeatureConfig,
    ctx: Option<&FeatureContext<'_>>,
) -> Result<FeatureMatrix, CohortError> {
    let ctx = match (config.uses_graph(), ctx) {
        (false, _) => None,
        (true, Some(c)) => Some(c),
        (true, None) => {
            return Err(CohortError::ConfigMismatch(format!(
                "{} needs embeddings and weights",
                config.name()
            )))
        }
    };
    if let Some(c) = ctx {
        if c.emb.dim != EMBEDDING_DIM {
            return Err(CohortError::ConfigMismatch(format!(
                "embedding dim {} != {EMBEDDING_DIM}",
                c.emb.dim
            )));
        }
    }
    let layout = ColumnLayout::for_config(config, ctx.map(|c| c.levels))?;
    let d = layout.len();
    let mut values = Array2::zeros((records.len(), d));
    let mut labels = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let tab = r
            .tabular_vector()
            .ok_or_else(|| CohortError::ConfigMismatch(format!("stay {} has missing values", r.stay_id)))?;
        let label = r
            .label
            .ok_or_else(|| CohortError::ConfigMismatch(format!("stay {} has no label", r.stay_id)))?;
        labels.push(label);
        let mut row = tab;
        if let Some(c) = ctx {
            row.extend(pool_admission(&r.codes, c.emb, c.weights));
            if config == FeatureConfig::Neurosymbolic {
                row.extend(category_counts(c.graph, c.levels, &r.codes, &r.stay_id).to_vector(c.levels));
            }
        }
        debug_assert_eq!(row.len(), d);
        for (j, v) in row.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    Ok(FeatureMatrix {
        rows: records.iter().map(|r| r.stay_id.clone()).collect(),
        columns: layout,
        values,
        labels,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, prepare_cohort, CohortSpec, SplitMode};
    use crate::embeddings::compute_idf;
    use crate::ontology::{builtin_toy_ontology, discover_levels, parse_concept_graph};

    fn toy_emb(graph: &ConceptGraph) -> EmbeddingTable {
        let mut emb = EmbeddingTable::new(EMBEDDING_DIM);
        for (k, id) in graph.ids().enumerate() {
            emb.insert(
                id.clone(),
                (0..EMBEDDING_DIM).map(|j| (k * 31 + j) as f64 / 100.0).collect(),
            )
            .unwrap();
        }
        emb
    }

    fn records() -> Vec<AdmissionRecord> {
        let mut spec = CohortSpec::default();
        spec.n = 60;
        let recs = generate_cohort(&spec, &builtin_toy_ontology(), 1).unwrap();
        prepare_cohort(&recs, 0.3, SplitMode::Stay, 0.3, 1).unwrap().train
    }

    #[test]
    fn tabular_has_18_columns_in_order() {
        let m = assemble_features(&records(), FeatureConfig::Tabular, None).unwrap();
        assert_eq!(m.n_cols(), 18);
        let want: Vec<String> = FEATURES.iter().map(|f| f.key().to_string()).collect();
        assert_eq!(m.columns.names(), want);
    }

    #[test]
    fn six_anchor_ontology_gives_56_columns() {
        let concepts =
            "id\tterm\tactive\nr\troot\t1\na\tA\t1\nb\tB\t1\na1\tA1\t1\na2\tA2\t1\nb1\tB1\t1\nb2\tB2\t1\nx\tleaf\t1\n";
        let rels = "child\tparent\tactive\na\tr\t1\nb\tr\t1\na1\ta\t1\na2\ta\t1\nb1\tb\t1\nb2\tb\t1\nx\ta1\t1\n";
        let graph = parse_concept_graph(concepts, rels).unwrap();
        let levels = discover_levels(&graph).unwrap();
        assert_eq!(levels.anchor_count(), 6);
        let emb = toy_emb(&graph);
        let mut recs = records();
        recs.truncate(3);
        recs[0].codes = vec!["x".into()];
        let weights = compute_idf(recs.iter().map(|r| r.codes.as_slice())).unwrap();
        let ctx = FeatureContext {
            emb: &emb,
            weights: &weights,
            levels: &levels,
            graph: &graph,
        };
        let m = assemble_features(&recs, FeatureConfig::Neurosymbolic, Some(&ctx)).unwrap();
        assert_eq!(m.n_cols(), 56);
        let a1 = m.columns.index_of("onto_a1").unwrap();
        assert_eq!(m.values[[0, a1]], 1.0);
    }

    #[test]
    fn codeless_stay_has_zero_blocks() {
        let graph = builtin_toy_ontology();
        let levels = discover_levels(&graph).unwrap();
        let emb = toy_emb(&graph);
        let mut recs = records();
        recs[0].codes.clear();
        let weights = compute_idf(recs.iter().map(|r| r.codes.as_slice())).unwrap();
        let ctx = FeatureContext {
            emb: &emb,
            weights: &weights,
            levels: &levels,
            graph: &graph,
        };
        let m = assemble_features(&recs, FeatureConfig::Neurosymbolic, Some(&ctx)).unwrap();
        assert_eq!(m.n_cols(), 18 + 32 + 12);
        assert!(m.values.row(0).iter().skip(18).all(|v| *v == 0.0));
        let kg = assemble_features(&recs, FeatureConfig::TabularKg, Some(&ctx)).unwrap();
        assert_eq!(kg.n_cols(), 50);
    }

    #[test]
    fn graph_config_without_context_is_mismatch() {
        assert!(matches!(
            assemble_features(&records(), FeatureConfig::TabularKg, None),
            Err(CohortError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn unimputed_records_are_rejected() {
        let mut recs = records();
        recs[0].features.insert(Feature::Sbp, None);
        assert!(assemble_features(&recs, FeatureConfig::Tabular, None).is_err());
    }
}
