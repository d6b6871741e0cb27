use super::{ExperimentConfig, HarnessError};
use crate::cohort::{
    assemble_features, generate_cohort, prepare_cohort, read_admissions_jsonl, AdmissionRecord, CohortSpec,
    FeatureConfig, FeatureContext, FeatureMatrix, PreparedCohort,
};
use crate::embeddings::{compute_idf, generate_walks, train_skipgram, EmbeddingTable, WeightTable};
use crate::ontology::{builtin_toy_ontology, discover_levels, load_concept_graph, ConceptGraph, LevelMap};

/// Ontology, cohort, split and embeddings for one seed.
pub struct Pipeline {
    pub seed: u64,
    pub graph: ConceptGraph,
    pub levels: LevelMap,
    pub records: Vec<AdmissionRecord>,
    pub prepared: PreparedCohort,
    pub embeddings: Option<EmbeddingTable>,
    pub weights: WeightTable,
}

pub fn load_graph(cfg: &ExperimentConfig) -> Result<ConceptGraph, HarnessError> {
    match &cfg.ontology {
        None => Ok(builtin_toy_ontology()),
        Some(p) => load_concept_graph(&p.concepts, &p.relationships).map_err(|e| HarnessError::data("ontology", e)),
    }
}

pub fn load_records(
    cfg: &ExperimentConfig,
    graph: &ConceptGraph,
    seed: u64,
) -> Result<Vec<AdmissionRecord>, HarnessError> {
    if let Some(path) = &cfg.cohort_file {
        return read_admissions_jsonl(path).map_err(|e| HarnessError::data("cohort", e));
    }
    let spec = match &cfg.cohort_spec {
        Some(p) => CohortSpec::load(p).map_err(|e| HarnessError::data("cohort", e))?,
        None => CohortSpec::default(),
    };
    generate_cohort(&spec, graph, seed).map_err(|e| HarnessError::data("cohort", e))
}

pub fn train_embeddings(
    cfg: &ExperimentConfig,
    graph: &ConceptGraph,
    seed: u64,
) -> Result<EmbeddingTable, HarnessError> {
    let walks = generate_walks(graph, &cfg.walks, seed).map_err(|e| HarnessError::data("embed", e))?;
    train_skipgram(&walks, &cfg.skipgram, seed).map_err(|e| HarnessError::data("embed", e))
}

impl Pipeline {
    pub fn build(cfg: &ExperimentConfig, seed: u64, with_embeddings: bool) -> Result<Self, HarnessError> {
        let graph = load_graph(cfg)?;
        let levels = discover_levels(&graph).map_err(|e| HarnessError::data("ontology", e))?;
        let records = load_records(cfg, &graph, seed)?;
        let s = &cfg.split;
        let prepared = prepare_cohort(&records, s.max_missing, s.mode, s.val_frac, seed)
            .map_err(|e| HarnessError::data("cohort", e))?;
        if prepared.train.is_empty() || prepared.val.is_empty() {
            return Err(HarnessError::data("cohort", "train or validation split is empty"));
        }
        let embeddings = if with_embeddings {
            Some(train_embeddings(cfg, &graph, seed)?)
        } else {
            None
        };
        let weights = compute_idf(prepared.train.iter().map(|r| r.codes.as_slice()))
            .map_err(|e| HarnessError::data("embed", e))?;
        Ok(Self {
            seed,
            graph,
            levels,
            records,
            prepared,
            embeddings,
            weights,
        })
    }

    pub fn feature_context(&self) -> Option<FeatureContext<'_>> {
        self.embeddings.as_ref().map(|emb| FeatureContext {
            emb,
            weights: &self.weights,
            levels: &self.levels,
            graph: &self.graph,
        })
    }

    /// Train and validation matrices for one configuration.
    pub fn matrices(&self, config: FeatureConfig) -> Result<(FeatureMatrix, FeatureMatrix), HarnessError> {
        let ctx = self.feature_context();
        let tr = assemble_features(&self.prepared.train, config, ctx.as_ref())
            .map_err(|e| HarnessError::data("features", e))?;
        let va = assemble_features(&self.prepared.val, config, ctx.as_ref())
            .map_err(|e| HarnessError::data("features", e))?;
        Ok((tr, va))
    }
}
