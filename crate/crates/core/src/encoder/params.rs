use std::ops::Range;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderError};
use crate::{binfile, rng};

pub(crate) const INIT_STD: f64 = 0.02;

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Matrices are decayed and initialised randomly; vectors are not.
    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn family(&self) -> &'static str {
        let n = self.name.as_str();
        if n.ends_with("emb") {
            "embeddings"
        } else if n.contains(".attn.") {
            "attention"
        } else if n.contains(".ffn.") {
            "ffn"
        } else if n.contains(".ln") {
            "layer_norm"
        } else {
            "head"
        }
    }
}

/// Position of a tensor in the flat vector, with its matrix view shape.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerSlots {
    pub q_w: Slot,
    pub q_b: Slot,
    pub k_w: Slot,
    pub k_b: Slot,
    pub v_w: Slot,
    pub v_b: Slot,
    pub o_w: Slot,
    pub o_b: Slot,
    pub ln1_g: Slot,
    pub ln1_b: Slot,
    pub ffn_w1: Slot,
    pub ffn_b1: Slot,
    pub ffn_w2: Slot,
    pub ffn_b2: Slot,
    pub ln2_g: Slot,
    pub ln2_b: Slot,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub tok_emb: Slot,
    pub pos_emb: Slot,
    pub layers: Vec<LayerSlots>,
    pub head_bias: Slot,
    pub total: usize,
}

impl Layout {
    pub fn for_config(config: &EncoderConfig) -> Self {
        let (h, f, v, s) = (config.hidden_size, config.ffn_size, config.vocab_size, config.max_seq_len);
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let (rows, cols) = match shape[..] {
                [r, c] => (r, c),
                [n] => (1, n),
                _ => unreachable!(),
            };
            let slot = Slot { offset, rows, cols };
            tensors.push(TensorSpec { name, shape, offset });
            offset += rows * cols;
            slot
        };
        let tok_emb = add("tok_emb".into(), vec![v, h]);
        let pos_emb = add("pos_emb".into(), vec![s, h]);
        let layers = (0..config.num_layers)
            .map(|l| {
                let mut t = |suffix: &str, shape: Vec<usize>| add(format!("layers.{l}.{suffix}"), shape);
                LayerSlots {
                    q_w: t("attn.q.weight", vec![h, h]),
                    q_b: t("attn.q.bias", vec![h]),
                    k_w: t("attn.k.weight", vec![h, h]),
                    k_b: t("attn.k.bias", vec![h]),
                    v_w: t("attn.v.weight", vec![h, h]),
                    v_b: t("attn.v.bias", vec![h]),
                    o_w: t("attn.o.weight", vec![h, h]),
                    o_b: t("attn.o.bias", vec![h]),
                    ln1_g: t("ln1.gamma", vec![h]),
                    ln1_b: t("ln1.beta", vec![h]),
                    ffn_w1: t("ffn.w1", vec![h, f]),
                    ffn_b1: t("ffn.b1", vec![f]),
                    ffn_w2: t("ffn.w2", vec![f, h]),
                    ffn_b2: t("ffn.b2", vec![h]),
                    ln2_g: t("ln2.gamma", vec![h]),
                    ln2_b: t("ln2.beta", vec![h]),
                }
            })
            .collect();
        let head_bias = add("head.bias".into(), vec![v]);
        Self {
            tensors,
            tok_emb,
            pos_emb,
            layers,
            head_bias,
            total: offset,
        }
    }
}

/// Trainable tensors of the encoder and its MLM head, stored flat as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub values: Vec<f32>,
}

impl EncoderParams {
    pub fn tensors(&self) -> Vec<TensorSpec> {
        Layout::for_config(&self.config).tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.tensors().into_iter().find(|t| t.name == name).map(|t| &self.values[t.range()])
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    /// Little-endian bytes of every value, in layout order.
    pub fn payload_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Gaussian(0, 0.02) for matrices, ones for layer-norm scales, zeros for
/// every bias and shift.
pub fn init_encoder(config: &EncoderConfig) -> Result<EncoderParams, EncoderError> {
    config.validate()?;
    let layout = Layout::for_config(config);
    let mut values = vec![0f32; layout.total];
    let mut rng = rng::keyed(config.seed, "encoder-init");
    let normal = Normal::new(0.0, INIT_STD).unwrap();
    for spec in &layout.tensors {
        let slice = &mut values[spec.range()];
        if spec.is_matrix() {
            slice.iter_mut().for_each(|v| *v = normal.sample(&mut rng) as f32);
        } else if spec.name.ends_with("gamma") {
            slice.fill(1.0);
        }
    }
    Ok(EncoderParams {
        config: config.clone(),
        values,
    })
}

const FORMAT: &str = "reqvec-encoder/1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: EncoderConfig,
    tensors: Vec<TensorSpec>,
    total: usize,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// Writes the weight file. `metadata` (e.g. the training config) is stored in
/// the manifest verbatim.
pub fn save_params(params: &EncoderParams, path: &Path, metadata: serde_json::Value) -> Result<(), EncoderError> {
    let layout = Layout::for_config(&params.config);
    let manifest = Manifest {
        format: FORMAT.to_owned(),
        config: params.config.clone(),
        tensors: layout.tensors,
        total: layout.total,
        metadata,
    };
    binfile::write(path, &manifest, &params.values)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<EncoderParams, EncoderError> {
    let (manifest, values) = binfile::read::<Manifest>(path, |m| m.total)?;
    if manifest.format != FORMAT {
        return Err(EncoderError::Format(format!("unsupported format {:?}", manifest.format)));
    }
    manifest.config.validate().map_err(|e| EncoderError::ShapeMismatch(e.to_string()))?;
    let layout = Layout::for_config(&manifest.config);
    if manifest.total != layout.total || manifest.tensors != layout.tensors {
        let first_bad = manifest
            .tensors
            .iter()
            .zip(&layout.tensors)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("tensor {} has shape {:?}, config implies {:?}", a.name, a.shape, b.shape))
            .unwrap_or_else(|| format!("{} tensors listed, config implies {}", manifest.tensors.len(), layout.tensors.len()));
        return Err(EncoderError::ShapeMismatch(first_bad));
    }
    Ok(EncoderParams {
        config: manifest.config,
        values,
    })
}

/// Reads only the metadata block of a weight file.
pub fn load_metadata(path: &Path) -> Result<serde_json::Value, EncoderError> {
    let (manifest, _) = binfile::read::<Manifest>(path, |m| m.total)?;
    Ok(manifest.metadata)
}
