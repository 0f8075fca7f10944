//! Supervised anomaly classifiers over request embeddings and the evaluation
//! metrics reported for them.
//!
//! Labels are booleans with `true` meaning anomaly. Every model exposes a
//! real-valued decision score; a positive score predicts an anomaly.

mod forest;
mod linear;
mod metrics;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FoldAssignment, Label};

pub use forest::{train_random_forest, DecisionTree, ForestConfig, ForestModel, TreeNode};
pub use linear::{train_linear_svm, train_logreg, LinearKind, LinearModel, LogRegConfig, Standardizer, SvmConfig};
pub use metrics::{
    confusion, evaluate, evaluate_cv, f1_score, fpr_at_tpr, matthews_corrcoef, roc_curve, Confusion, EvalReport,
    FoldReport, Metrics, RocPoint, DECISION_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0} samples but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("document {0} is unlabeled")]
    Unlabeled(String),
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Format(String),
}

/// Boolean anomaly labels; fails on unlabeled rows.
pub fn binary_labels(labels: &[Label], ids: &[&str]) -> Result<Vec<bool>, ClassifyError> {
    labels
        .iter()
        .zip(ids)
        .map(|(l, id)| l.is_anomaly().ok_or_else(|| ClassifyError::Unlabeled(id.to_string())))
        .collect()
}

pub(crate) fn check_training_set(x: &Array2<f64>, y: &[bool]) -> Result<(), ClassifyError> {
    if x.nrows() != y.len() {
        return Err(ClassifyError::LengthMismatch(x.nrows(), y.len()));
    }
    if !(y.iter().any(|&v| v) && y.iter().any(|&v| !v)) {
        return Err(ClassifyError::SingleClass);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Logreg,
    LinearSvm,
    RandomForest,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [ClassifierKind::Logreg, ClassifierKind::RandomForest, ClassifierKind::LinearSvm];

    /// Short column label used in report tables.
    pub fn short_name(self) -> &'static str {
        match self {
            ClassifierKind::Logreg => "LR",
            ClassifierKind::LinearSvm => "SVM",
            ClassifierKind::RandomForest => "RF",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::Logreg => "logreg",
            ClassifierKind::LinearSvm => "linear_svm",
            ClassifierKind::RandomForest => "random_forest",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logreg" | "lr" => Ok(ClassifierKind::Logreg),
            "linear_svm" | "svm" | "svc" => Ok(ClassifierKind::LinearSvm),
            "random_forest" | "rf" | "forest" => Ok(ClassifierKind::RandomForest),
            other => Err(format!("unknown classifier {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    /// Z-score features (fit on the training rows only) before linear training.
    pub standardize: bool,
    pub logreg: LogRegConfig,
    pub svm: SvmConfig,
    pub forest: ForestConfig,
}

impl ClassifierConfig {
    pub fn new(kind: ClassifierKind) -> Self {
        Self {
            kind,
            standardize: true,
            logreg: LogRegConfig::default(),
            svm: SvmConfig::default(),
            forest: ForestConfig::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.svm.seed = seed;
        self.forest.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Forest(ForestModel),
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.weights.len(),
            Model::Forest(m) => m.num_features,
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            Model::Linear(m) => match m.kind {
                LinearKind::Logreg => ClassifierKind::Logreg,
                LinearKind::LinearSvm => ClassifierKind::LinearSvm,
            },
            Model::Forest(_) => ClassifierKind::RandomForest,
        }
    }

    pub fn as_linear(&self) -> Option<&LinearModel> {
        match self {
            Model::Linear(m) => Some(m),
            Model::Forest(_) => None,
        }
    }

    /// `w·x + b` for linear models, `P(anomaly) − 0.5` for forests.
    pub fn decision_score(&self, x: ArrayView1<f64>) -> Result<f64, ClassifyError> {
        if x.len() != self.dim() {
            return Err(ClassifyError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(match self {
            Model::Linear(m) => m.score_unchecked(x),
            Model::Forest(m) => m.anomaly_probability(x) - 0.5,
        })
    }

    pub fn decision_scores(&self, x: &Array2<f64>) -> Result<Vec<f64>, ClassifyError> {
        x.rows().into_iter().map(|r| self.decision_score(r)).collect()
    }
}

pub fn train(x: &Array2<f64>, y: &[bool], config: &ClassifierConfig) -> Result<Model, ClassifyError> {
    let scaler = || config.standardize.then(|| Standardizer::fit(x));
    match config.kind {
        ClassifierKind::Logreg => train_logreg(x, y, &config.logreg, scaler()).map(Model::Linear),
        ClassifierKind::LinearSvm => train_linear_svm(x, y, &config.svm, scaler()).map(Model::Linear),
        ClassifierKind::RandomForest => train_random_forest(x, y, &config.forest).map(Model::Forest),
    }
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), ClassifyError> {
    let text = serde_json::to_string(model).map_err(|e| ClassifyError::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|source| ClassifyError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<Model, ClassifyError> {
    let text = std::fs::read_to_string(path).map_err(|source| ClassifyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ClassifyError::Format(e.to_string()))
}

/// Folds whose test rows are never part of their training rows.
pub(crate) fn fold_split(folds: &FoldAssignment, fold: usize) -> (Vec<usize>, Vec<usize>) {
    (folds.train_indices(fold), folds.test_indices(fold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_score_and_dimension_check() {
        let m = Model::Linear(LinearModel::from_parts(LinearKind::Logreg, vec![1.0, 0.0], 0.0));
        assert_eq!(m.decision_score(array![2.0, 5.0].view()).unwrap(), 2.0);
        assert_eq!(m.decision_score(array![0.0, 7.0].view()).unwrap(), 0.0);
        assert!(matches!(
            m.decision_score(array![1.0].view()),
            Err(ClassifyError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let x = array![[0.1, 3.0], [0.3, 2.0], [5.2, -1.0], [5.9, -2.5]];
        let y = [false, false, true, true];
        let dir = tempfile::tempdir().unwrap();
        for kind in ClassifierKind::ALL {
            let model = train(&x, &y, &ClassifierConfig::new(kind).with_seed(3)).unwrap();
            let path = dir.path().join(format!("{kind}.json"));
            save_model(&model, &path).unwrap();
            let loaded = load_model(&path).unwrap();
            assert_eq!(loaded, model);
            assert_eq!(loaded.kind(), kind);
            let first = std::fs::read(&path).unwrap();
            save_model(&loaded, &path).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), first);
        }
    }
}
