use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::cohort::{FeatureConfig, SplitMode, DEFAULT_MAX_MISSING};
use crate::embeddings::{SkipGramParams, WalkParams};
use crate::metrics::PerturbationConfig;
use crate::narrative::Budgets;
use crate::predictors::{Hyper, PredictorKind};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const STUB: &str = "STUB";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OntologyPaths {
    pub concepts: PathBuf,
    pub relationships: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub mode: SplitMode,
    pub val_frac: f64,
    pub max_missing: f64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            mode: SplitMode::Stay,
            val_frac: 0.3,
            max_missing: DEFAULT_MAX_MISSING,
        }
    }
}

/// A chat-completions endpoint, or `"STUB"` for the offline client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointSettings {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl EndpointSettings {
    fn with_temperature(temperature: f64) -> Self {
        Self {
            endpoint: STUB.into(),
            model: "default".into(),
            temperature,
            timeout_secs: 120,
            retries: 2,
        }
    }

    pub fn is_stub(&self) -> bool {
        self.endpoint.eq_ignore_ascii_case(STUB)
    }
}

impl Default for EndpointSettings {
    fn default() -> Self {
        Self::with_temperature(0.2)
    }
}

fn judge_default() -> EndpointSettings {
    EndpointSettings::with_temperature(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExplainerChoice {
    /// Exact enumeration when the width allows it, KernelSHAP otherwise.
    #[default]
    Auto,
    Exact,
    Kernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSettings {
    pub radius: f64,
    pub n_perturb: usize,
    pub mask_prob: f64,
}

impl Default for PerturbationSettings {
    fn default() -> Self {
        let p = PerturbationConfig::default();
        Self {
            radius: p.radius,
            n_perturb: p.n_perturb,
            mask_prob: p.mask_prob,
        }
    }
}

impl PerturbationSettings {
    pub fn with_seed(&self, seed: u64) -> PerturbationConfig {
        PerturbationConfig {
            radius: self.radius,
            n_perturb: self.n_perturb,
            mask_prob: self.mask_prob,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSettings {
    pub predictor: PredictorKind,
    pub config: FeatureConfig,
    pub explainer: ExplainerChoice,
    pub kernel_samples: usize,
    /// Validation stay to explain; the highest-risk one when absent.
    pub stay_id: Option<String>,
    pub runs: usize,
    pub top_k: usize,
    pub perturbation: PerturbationSettings,
    pub budgets: Budgets,
    pub retrieve_k: usize,
    /// Narrative generations in flight at once.
    pub concurrency: usize,
    pub template: Option<PathBuf>,
    pub knowledge_base: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            predictor: PredictorKind::Logistic,
            config: FeatureConfig::Neurosymbolic,
            explainer: ExplainerChoice::Auto,
            kernel_samples: 2048,
            stay_id: None,
            runs: 30,
            top_k: 5,
            perturbation: PerturbationSettings::default(),
            budgets: Budgets::default(),
            retrieve_k: 5,
            concurrency: 2,
            template: None,
            knowledge_base: None,
            lexicon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Cohort generator spec; the bundled one when absent.
    pub cohort_spec: Option<PathBuf>,
    /// Admissions JSONL to use instead of generating a cohort.
    pub cohort_file: Option<PathBuf>,
    /// Concept and relationship TSVs; the bundled toy ontology when absent.
    pub ontology: Option<OntologyPaths>,
    pub predictors: Vec<PredictorKind>,
    pub configs: Vec<FeatureConfig>,
    pub seeds: Vec<u64>,
    pub n_boot: usize,
    pub split: SplitSettings,
    pub hyper: BTreeMap<PredictorKind, Hyper>,
    pub walks: WalkParams,
    pub skipgram: SkipGramParams,
    pub explain: ExplainSettings,
    pub llm: EndpointSettings,
    #[serde(default = "judge_default")]
    pub judge: EndpointSettings,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            cohort_spec: None,
            cohort_file: None,
            ontology: None,
            predictors: PredictorKind::ALL.to_vec(),
            configs: FeatureConfig::ALL.to_vec(),
            seeds: vec![0],
            n_boot: 1000,
            split: SplitSettings::default(),
            hyper: BTreeMap::new(),
            walks: WalkParams::default(),
            skipgram: SkipGramParams::default(),
            explain: ExplainSettings::default(),
            llm: EndpointSettings::default(),
            judge: judge_default(),
            out_dir: PathBuf::from("neuron-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for p in [
            self.cohort_spec.as_mut(),
            self.cohort_file.as_mut(),
            self.explain.template.as_mut(),
            self.explain.knowledge_base.as_mut(),
            self.explain.lexicon.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let Some(o) = self.ontology.as_mut() {
            fix(&mut o.concepts);
            fix(&mut o.relationships);
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Usage(format!("invalid config: {m}")));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.predictors.is_empty() || self.configs.is_empty() {
            return bad("at least one predictor and one feature config are required".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        if self.n_boot < 100 {
            return bad(format!("n_boot {} is below 100", self.n_boot));
        }
        if !(self.split.val_frac > 0.0 && self.split.val_frac < 1.0) {
            return bad(format!("split.val_frac {} must be in (0, 1)", self.split.val_frac));
        }
        if !(0.0..=1.0).contains(&self.split.max_missing) {
            return bad(format!(
                "split.max_missing {} must be in [0, 1]",
                self.split.max_missing
            ));
        }
        let e = &self.explain;
        if e.runs < 2 {
            return bad(format!("explain.runs {} must be at least 2", e.runs));
        }
        if e.top_k == 0 || e.retrieve_k == 0 || e.concurrency == 0 {
            return bad("explain.top_k, retrieve_k and concurrency must be positive".into());
        }
        e.budgets.validate().or_else(|err| bad(err.to_string()))?;
        e.perturbation
            .with_seed(0)
            .validate()
            .or_else(|err| bad(err.to_string()))?;
        for (kind, h) in &self.hyper {
            if let Err(err) = kind.resolve_hyper(h) {
                return bad(format!("hyper.{}: {err}", kind.name()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the canonical JSON form, ignoring `out_dir`.
    pub fn sha256(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let digest = Sha256::digest(serde_json::to_string(&c).expect("config serialises").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn hyper_for(&self, kind: PredictorKind) -> Hyper {
        self.hyper.get(&kind).cloned().unwrap_or_default()
    }
}
