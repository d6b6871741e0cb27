//! Shapley attributions: exact coalition enumeration, KernelSHAP, and the
//! post-processing that turns a raw attribution into ranked drivers.
//!
//! Masked coordinates take the baseline value. Outputs are explained in
//! logit space unless [`OutputSpace::Prob`] is requested.

mod drivers;
mod shapley;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictors::Predictor;
use crate::util::sigmoid;

pub use drivers::{collapse_and_group, rank_drivers, Direction, DriverList, GroupEntry, GroupKind, GroupedAttribution};
pub use shapley::{exact_shapley, kernel_shap, shapley_kernel_weight, MAX_EXACT_FEATURES};

#[derive(Debug, Error, PartialEq)]
pub enum AttributionError {
    #[error("exact enumeration supports at most {max} features, got {0}", max = MAX_EXACT_FEATURES)]
    TooManyFeatures(usize),
    #[error("weighted least-squares system is singular")]
    SingularSystem,
    #[error("n_samples must be at least {min}, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layout has {layout} columns but attribution has {attr}")]
    LayoutMismatch { layout: usize, attr: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutputSpace {
    #[default]
    Logit,
    Prob,
}

/// A scalar function of a feature vector. `logit` is the raw score; in
/// [`OutputSpace::Prob`] it is passed through the logistic function.
pub trait Model: Sync {
    fn n_features(&self) -> usize;
    fn logit(&self, x: &[f64]) -> f64;

    fn output(&self, x: &[f64], space: OutputSpace) -> f64 {
        match space {
            OutputSpace::Logit => self.logit(x),
            OutputSpace::Prob => sigmoid(self.logit(x)),
        }
    }
}

/// Wrap a closure as a [`Model`].
pub struct FnModel<F> {
    pub d: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Model for FnModel<F> {
    fn n_features(&self) -> usize {
        self.d
    }

    fn logit(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// A trained predictor seen in its own scaled input space.
impl Model for Predictor {
    fn n_features(&self) -> usize {
        Predictor::n_features(self)
    }

    fn logit(&self, z: &[f64]) -> f64 {
        self.logit_model_space(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub phi0: f64,
    pub phi: Vec<f64>,
    pub fx: f64,
    pub space: OutputSpace,
    #[serde(default)]
    pub column_names: Vec<String>,
}

impl AttributionVector {
    /// `|fx − (phi0 + Σφ)|`.
    pub fn efficiency_gap(&self) -> f64 {
        (self.fx - self.phi0 - self.phi.iter().sum::<f64>()).abs()
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.column_names = names;
        self
    }
}

/// A reusable attribution method.
pub trait Explainer: Sync {
    fn name(&self) -> &'static str;
    /// Same inputs always give the same output, whatever the seed.
    fn is_deterministic(&self) -> bool;
    fn explain(
        &self,
        model: &dyn Model,
        x: &[f64],
        baseline: &[f64],
        seed: u64,
    ) -> Result<AttributionVector, AttributionError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactExplainer {
    pub space: OutputSpace,
}

impl Explainer for ExactExplainer {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn explain(
        &self,
        model: &dyn Model,
        x: &[f64],
        baseline: &[f64],
        _seed: u64,
    ) -> Result<AttributionVector, AttributionError> {
        exact_shapley(model, x, baseline, self.space)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KernelExplainer {
    pub n_samples: usize,
    pub space: OutputSpace,
}

impl Default for KernelExplainer {
    fn default() -> Self {
        Self {
            n_samples: 2048,
            space: OutputSpace::Logit,
        }
    }
}

impl Explainer for KernelExplainer {
    fn name(&self) -> &'static str {
        "kernel"
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn explain(
        &self,
        model: &dyn Model,
        x: &[f64],
        baseline: &[f64],
        seed: u64,
    ) -> Result<AttributionVector, AttributionError> {
        kernel_shap(model, x, baseline, self.n_samples, seed, self.space)
    }
}
