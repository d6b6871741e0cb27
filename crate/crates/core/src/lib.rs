//! Ontology-informed mortality risk modelling with explanation-quality
//! evaluation.
//!
//! The crate is organised as a pipeline:
//!
//! ```text
//! ontology ──► embeddings ──► cohort ──► predictors ──► attribution
//!                                                        │
//!                         narrative ◄────────────────────┤
//!                             │                          │
//!                             └──────► metrics ◄─────────┘
//!                                         │
//!                                      harness (CLI, reports)
//! ```
//!
//! * [`ontology`] parses is-a concept hierarchies, discovers the two anchor
//!   levels used for category counts, and renders concepts as documents.
//! * [`embeddings`] trains Node2Vec concept vectors and pools them per
//!   admission with TF-IDF weights.
//! * [`cohort`] generates a synthetic heart-failure ICU cohort and applies
//!   the filtering, imputation, scaling and feature-assembly rules.
//! * [`predictors`] holds the logistic, MLP and gradient-boosted-tree risk
//!   models plus AUC/bootstrap evaluation.
//! * [`attribution`] computes exact and kernel Shapley values and turns them
//!   into ranked, grouped drivers.
//! * [`narrative`] builds the retrieval-grounded prompt and parses the
//!   generated narrative.
//! * [`metrics`] scores both explanation modalities.
//! * [`harness`] wires everything into experiments and the `neuron` CLI.
//!
//! Runnable walkthroughs for each stage live in `examples/`.

pub mod attribution;
pub mod cohort;
pub mod document;
pub mod embeddings;
pub mod harness;
pub mod metrics;
pub mod narrative;
pub mod ontology;
pub mod predictors;
pub mod util;
