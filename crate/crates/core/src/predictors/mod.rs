//! Binary risk predictors: logistic regression, a one-hidden-layer MLP and
//! gradient-boosted depth-limited trees, behind one [`Predictor`] type.
//!
//! Each predictor owns the [`ScalerParams`] it was fitted with, so callers
//! always pass raw (imputed) feature rows. Attribution works in the scaled
//! "model space" through [`Predictor::model_space`].

mod eval;
mod gbt;
mod linear;
mod mlp;
mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{FeatureConfig, FeatureMatrix, ScaleMode, Scaler, ScalerParams};
use crate::util::sigmoid;

pub use eval::{auc, bootstrap_auc, confusion_at, evaluate, evaluate_scores, BootstrapAuc, Confusion, PerformanceRow};
pub use gbt::{GbtModel, Node, Tree};
pub use linear::LogisticModel;
pub use mlp::MlpModel;

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub type Hyper = BTreeMap<String, f64>;

#[derive(Debug, Error, PartialEq)]
pub enum PredictorError {
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("validation labels contain a single class")]
    SingleClassValidation,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid hyperparameter `{0}`")]
    InvalidHyper(String),
    #[error("n_boot must be at least 100, got {0}")]
    TooFewBootstraps(usize),
    #[error("model file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PredictorKind {
    Logistic,
    Mlp,
    Gbt,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 3] = [PredictorKind::Logistic, PredictorKind::Mlp, PredictorKind::Gbt];

    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::Logistic => "LOGISTIC",
            PredictorKind::Mlp => "MLP",
            PredictorKind::Gbt => "GBT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    pub fn scaling(self) -> ScaleMode {
        match self {
            PredictorKind::Logistic | PredictorKind::Mlp => ScaleMode::Zscore,
            PredictorKind::Gbt => ScaleMode::None,
        }
    }

    pub fn default_hyper(self) -> Hyper {
        let pairs: &[(&str, f64)] = match self {
            PredictorKind::Logistic => &[("epochs", 300.0), ("lr", 1.0), ("l2", 1e-4), ("momentum", 0.9)],
            PredictorKind::Mlp => &[
                ("epochs", 150.0),
                ("hidden", 32.0),
                ("lr", 0.5),
                ("l2", 1e-2),
                ("momentum", 0.9),
            ],
            PredictorKind::Gbt => &[
                ("rounds", 100.0),
                ("depth", 3.0),
                ("shrinkage", 0.1),
                ("lambda", 1.0),
                ("min_child_weight", 1.0),
            ],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    /// Defaults overlaid with `overrides`; unknown keys and non-finite or
    /// negative values are rejected.
    pub fn resolve_hyper(self, overrides: &Hyper) -> Result<Hyper, PredictorError> {
        let mut h = self.default_hyper();
        for (k, v) in overrides {
            if !h.contains_key(k) || !v.is_finite() || *v < 0.0 {
                return Err(PredictorError::InvalidHyper(k.clone()));
            }
            h.insert(k.clone(), *v);
        }
        for key in ["epochs", "hidden", "rounds", "depth"] {
            if let Some(v) = h.get(key) {
                if v.fract() != 0.0 || (key == "hidden" && *v < 1.0) {
                    return Err(PredictorError::InvalidHyper(key.into()));
                }
            }
        }
        Ok(h)
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    Logistic(LogisticModel),
    Mlp(MlpModel),
    Gbt(GbtModel),
}

impl ModelParams {
    fn logit(&self, z: &[f64]) -> f64 {
        match self {
            ModelParams::Logistic(m) => m.logit(z),
            ModelParams::Mlp(m) => m.logit(z),
            ModelParams::Gbt(m) => m.logit(z),
        }
    }

    fn logits(&self, z: &Array2<f64>) -> Vec<f64> {
        match self {
            ModelParams::Logistic(m) => m.logits(z),
            ModelParams::Mlp(m) => m.logits(z),
            ModelParams::Gbt(m) => z
                .rows()
                .into_iter()
                .map(|r| m.logit(r.as_slice().expect("row-major")))
                .collect(),
        }
    }
}

/// A trained, immutable predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub format_version: u32,
    pub kind: PredictorKind,
    pub hyper: Hyper,
    pub seed: u64,
    pub config: Option<FeatureConfig>,
    pub feature_names: Vec<String>,
    pub scaler: ScalerParams,
    pub params: ModelParams,
    /// Training loss after each accepted epoch (gradient-trained kinds).
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

pub fn train(
    kind: PredictorKind,
    matrix: &FeatureMatrix,
    hyper: &Hyper,
    seed: u64,
) -> Result<Predictor, PredictorError> {
    let mut p = train_arrays(
        kind,
        &matrix.values,
        &matrix.labels,
        &matrix.columns.names(),
        hyper,
        seed,
    )?;
    p.config = Some(matrix.config);
    Ok(p)
}

/// Train on a raw matrix. The scaler for `kind` is fitted on `x` itself.
pub fn train_arrays(
    kind: PredictorKind,
    x: &Array2<f64>,
    y: &[u8],
    names: &[String],
    hyper: &Hyper,
    seed: u64,
) -> Result<Predictor, PredictorError> {
    if y.len() != x.nrows() {
        return Err(PredictorError::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if names.len() != x.ncols() {
        return Err(PredictorError::DimensionMismatch {
            expected: x.ncols(),
            got: names.len(),
        });
    }
    let pos = y.iter().filter(|v| **v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(PredictorError::DegenerateLabels);
    }
    let hyper = kind.resolve_hyper(hyper)?;
    let scaler = Scaler::fit(x, kind.scaling());
    let z = scaler.transform(x);
    let yf: Vec<f64> = y.iter().map(|v| f64::from(*v)).collect();
    let (params, loss_history) = match kind {
        PredictorKind::Logistic => {
            let (m, h) = linear::fit(&z, &yf, &hyper);
            (ModelParams::Logistic(m), h)
        }
        PredictorKind::Mlp => {
            let (m, h) = mlp::fit(&z, &yf, &hyper, seed);
            (ModelParams::Mlp(m), h)
        }
        PredictorKind::Gbt => (ModelParams::Gbt(gbt::fit(&z, &yf, &hyper)), Vec::new()),
    };
    Ok(Predictor {
        format_version: MODEL_FORMAT_VERSION,
        kind,
        hyper,
        seed,
        config: None,
        feature_names: names.to_vec(),
        scaler,
        params,
        loss_history,
    })
}

impl Predictor {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn check(&self, n: usize) -> Result<(), PredictorError> {
        if n != self.n_features() {
            return Err(PredictorError::DimensionMismatch {
                expected: self.n_features(),
                got: n,
            });
        }
        Ok(())
    }

    /// Raw row → model-space row.
    pub fn model_space(&self, x: &[f64]) -> Result<Vec<f64>, PredictorError> {
        self.check(x.len())?;
        Ok(self.scaler.transform_row(ArrayView1::from(x)))
    }

    pub fn model_space_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>, PredictorError> {
        self.check(x.ncols())?;
        Ok(self.scaler.transform(x))
    }

    /// Log-odds for a model-space row.
    pub fn logit_model_space(&self, z: &[f64]) -> f64 {
        self.params.logit(z)
    }

    pub fn predict_logit(&self, x: &[f64]) -> Result<f64, PredictorError> {
        Ok(self.logit_model_space(&self.model_space(x)?))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, PredictorError> {
        Ok(sigmoid(self.predict_logit(x)?))
    }

    pub fn predict_proba_matrix(&self, x: &Array2<f64>) -> Result<Vec<f64>, PredictorError> {
        let z = self.model_space_matrix(x)?;
        let z = z.as_standard_layout().to_owned();
        Ok(self.params.logits(&z).into_iter().map(sigmoid).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("predictor serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, PredictorError> {
        let p: Predictor = serde_json::from_str(text).map_err(|e| PredictorError::Format(e.to_string()))?;
        if p.format_version != MODEL_FORMAT_VERSION {
            return Err(PredictorError::Format(format!(
                "unsupported format_version {}",
                p.format_version
            )));
        }
        if p.scaler.width() != p.n_features() {
            return Err(PredictorError::Format(
                "scaler width does not match feature names".into(),
            ));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        std::fs::write(path, self.to_json()).map_err(|e| PredictorError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PredictorError> {
        let text = std::fs::read_to_string(path).map_err(|e| PredictorError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// A logistic predictor with the given model-space weights; mainly for
    /// tests and worked examples.
    pub fn logistic_from_weights(weights: Vec<f64>, bias: f64) -> Self {
        let d = weights.len();
        Predictor {
            format_version: MODEL_FORMAT_VERSION,
            kind: PredictorKind::Logistic,
            hyper: PredictorKind::Logistic.default_hyper(),
            seed: 0,
            config: None,
            feature_names: (0..d).map(|j| format!("x{j}")).collect(),
            scaler: ScalerParams::identity(d),
            params: ModelParams::Logistic(LogisticModel { weights, bias }),
            loss_history: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn separable() -> (Array2<f64>, Vec<u8>, Vec<String>) {
        let x = array![
            [0.0, 0.1],
            [0.2, 0.3],
            [0.1, 0.9],
            [0.4, 0.2],
            [2.0, 2.1],
            [2.2, 1.8],
            [1.9, 2.5],
            [2.5, 2.0]
        ];
        (x, vec![0, 0, 0, 0, 1, 1, 1, 1], vec!["a".into(), "b".into()])
    }

    fn accuracy(p: &Predictor, x: &Array2<f64>, y: &[u8]) -> f64 {
        let probs = p.predict_proba_matrix(x).unwrap();
        probs.iter().zip(y).filter(|(p, y)| u8::from(**p >= 0.5) == **y).count() as f64 / y.len() as f64
    }

    #[test]
    fn every_kind_fits_separable_data() {
        let (x, y, names) = separable();
        for kind in PredictorKind::ALL {
            let p = train_arrays(kind, &x, &y, &names, &Hyper::new(), 1).unwrap();
            assert_eq!(accuracy(&p, &x, &y), 1.0, "{kind}");
        }
    }

    #[test]
    fn degenerate_labels() {
        let (x, _, names) = separable();
        for kind in PredictorKind::ALL {
            assert_eq!(
                train_arrays(kind, &x, &[0; 8], &names, &Hyper::new(), 1),
                Err(PredictorError::DegenerateLabels)
            );
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let (x, y, names) = separable();
        for kind in PredictorKind::ALL {
            let a = train_arrays(kind, &x, &y, &names, &Hyper::new(), 7).unwrap();
            let b = train_arrays(kind, &x, &y, &names, &Hyper::new(), 7).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_logistic_is_one_half() {
        let p = Predictor::logistic_from_weights(vec![0.0; 3], 0.0);
        assert_eq!(p.predict_proba(&[1.0, -2.0, 3.0]).unwrap(), 0.5);
        assert_eq!(
            p.predict_proba(&[1.0]),
            Err(PredictorError::DimensionMismatch { expected: 3, got: 1 })
        );
    }

    #[test]
    fn logit_matches_proba() {
        let (x, y, names) = separable();
        for kind in PredictorKind::ALL {
            let p = train_arrays(kind, &x, &y, &names, &Hyper::new(), 3).unwrap();
            for row in x.rows() {
                let r = row.to_vec();
                let pr = p.predict_proba(&r).unwrap();
                let l = p.predict_logit(&r).unwrap();
                if pr > 1e-6 && pr < 1.0 - 1e-6 {
                    assert!((l - (pr / (1.0 - pr)).ln()).abs() < 1e-9);
                }
                assert!((0.0..=1.0).contains(&pr));
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let (x, y, names) = separable();
        for kind in PredictorKind::ALL {
            let p = train_arrays(kind, &x, &y, &names, &Hyper::new(), 3).unwrap();
            let back = Predictor::from_json(&p.to_json()).unwrap();
            let r = [1.0, 1.0];
            assert_eq!(back.predict_logit(&r).unwrap(), p.predict_logit(&r).unwrap());
        }
    }

    #[test]
    fn unknown_hyper_rejected() {
        let mut h = Hyper::new();
        h.insert("depth".into(), 2.0);
        assert_eq!(
            PredictorKind::Logistic.resolve_hyper(&h),
            Err(PredictorError::InvalidHyper("depth".into()))
        );
        assert!(PredictorKind::Gbt.resolve_hyper(&h).is_ok());
    }
}
