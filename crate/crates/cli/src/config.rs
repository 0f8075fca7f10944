use std::path::Path;

use reqvec_core::classify::ClassifierConfig;
use reqvec_core::classify::ClassifierKind;
use reqvec_core::corpus::ProfileName;
use reqvec_core::encoder::{EncoderConfig, TrainConfig};
use reqvec_core::project::ProjectionConfig;
use reqvec_core::tokenizer::TokenizerConfig;
use reqvec_core::Pooling;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub normal_train: usize,
    pub normal_inference: usize,
    pub anomaly_inference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub pooling: Pooling,
    /// Reject encoders with fewer than four layers.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub top_k: usize,
    /// Anomalies explained when no doc id is given.
    pub max_docs: usize,
}

/// Every knob of every stage. The file form may be partial; missing keys
/// keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub profile: ProfileName,
    pub synth: SynthConfig,
    pub tokenizer: TokenizerConfig,
    /// `vocab_size` is taken from the trained vocabulary.
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub embed: EmbedConfig,
    pub classifier: ClassifierConfig,
    pub eval: EvalConfig,
    pub explain: ExplainConfig,
    pub projection: ProjectionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            profile: ProfileName::Csic,
            synth: SynthConfig {
                normal_train: 2000,
                normal_inference: 500,
                anomaly_inference: 500,
            },
            tokenizer: TokenizerConfig {
                vocab_size: 1000,
                seed: 0,
            },
            encoder: EncoderConfig::desk(1000),
            train: TrainConfig {
                epochs: 3,
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
            embed: EmbedConfig {
                pooling: Pooling::MeanTokens,
                strict: true,
            },
            classifier: ClassifierConfig::new(ClassifierKind::Logreg),
            eval: EvalConfig { folds: 5 },
            explain: ExplainConfig { top_k: 24, max_docs: 20 },
            projection: ProjectionConfig::default(),
        }
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let overlay: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut base = serde_json::to_value(Self::default()).expect("default config serializes");
        merge(&mut base, overlay);
        serde_json::from_value(base).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Pushes the global seed into every stage config.
    pub fn propagate_seed(&mut self) {
        self.tokenizer.seed = self.seed;
        self.encoder.seed = self.seed;
        self.train.seed = self.seed;
        self.classifier.svm.seed = self.seed;
        self.classifier.forest.seed = self.seed;
        self.projection.seed = self.seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 5, "train": {"epochs": 7}, "classifier": {"kind": "linear_svm"}}"#).unwrap();
        let c = PipelineConfig::load(Some(&path)).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.learning_rate, 1e-3);
        assert_eq!(c.classifier.kind, ClassifierKind::LinearSvm);
        assert_eq!(c.eval.folds, 5);
    }

    #[test]
    fn bad_file_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train": {"epochs": "many"}}"#).unwrap();
        assert!(matches!(PipelineConfig::load(Some(&path)), Err(CliError::Config(_))));
    }
}
