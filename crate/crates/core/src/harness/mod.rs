//! Experiment orchestration and the `neuron` command line.
//!
//! [`Pipeline`] builds the per-seed data stages, [`run_performance_experiment`]
//! trains every predictor × feature configuration, and
//! [`run_explanation_comparison`] produces the attribution and narrative
//! runs for one stay and scores them side by side. [`OutputDir`] owns the
//! on-disk layout and the manifest.

pub mod cli;
mod config;
mod experiment;
mod output;
mod pipeline;

use std::fmt::Display;

use thiserror::Error;

pub use config::{
    EndpointSettings, ExperimentConfig, ExplainSettings, ExplainerChoice, OntologyPaths, PerturbationSettings,
    SplitSettings, CONFIG_SCHEMA_VERSION, STUB,
};
pub use experiment::{
    build_narrative_resources, explain_once, make_judge, make_llm, narrate_once, prepare_focus,
    run_explanation_comparison, run_explanation_runs, run_performance_experiment, summarize_runs,
    write_explanation_outputs, write_performance_outputs, ExplanationOutcome, ExplanationRun, FocusCase,
    NarrativeResources, PerfEntry, PerformanceTable, TrainedModel,
};
pub use output::{Manifest, OutputDir, MANIFEST_FILE};
pub use pipeline::{load_graph, load_records, train_embeddings, Pipeline};

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    /// Bad arguments or configuration.
    #[error("usage: {0}")]
    Usage(String),
    /// Input data or a local computation failed.
    #[error("{stage}: {message}")]
    Data { stage: &'static str, message: String },
    /// A remote model endpoint failed.
    #[error("{stage}: {message}")]
    External { stage: &'static str, message: String },
}

impl HarnessError {
    pub fn data(stage: &'static str, e: impl Display) -> Self {
        HarnessError::Data {
            stage,
            message: e.to_string(),
        }
    }

    pub fn external(stage: &'static str, e: impl Display) -> Self {
        HarnessError::External {
            stage,
            message: e.to_string(),
        }
    }

    /// Process exit status: 1 usage, 2 data, 3 external service.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Data { .. } => 2,
            HarnessError::External { .. } => 3,
        }
    }
}
