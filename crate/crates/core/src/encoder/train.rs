use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mask::{mask_with, MaskedSequence};
use super::model::{Encoder, Mode};
use super::{EncoderError, EncoderParams};
use crate::rng;
use crate::tokenizer::{BbpeVocab, TokenId, BYTE_OFFSET, EOS};

/// Held-out masks used for the perplexity trace are drawn from at most this
/// many training sequences.
const EVAL_SEQUENCES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub dynamic_masking: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-4,
            warmup_fraction: 0.06,
            weight_decay: 0.01,
            dynamic_masking: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), EncoderError> {
        if self.batch_size == 0 {
            return Err(EncoderError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.warmup_fraction) || self.weight_decay < 0.0 {
            return Err(EncoderError::InvalidConfig("optimizer settings out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    /// Mean masked cross-entropy of each optimizer step.
    pub step_losses: Vec<f64>,
    /// Masked-token perplexity on fixed held-out masks after each epoch.
    pub epoch_perplexity: Vec<f64>,
    pub initial_perplexity: Option<f64>,
    pub final_perplexity: Option<f64>,
}

/// Tokenizes each non-empty line as its own `[BOS] … [EOS]` sequence,
/// truncated to `max_seq_len` with the EOS kept.
pub fn prepare_sequences<'a>(
    vocab: &BbpeVocab,
    lines: impl IntoIterator<Item = &'a str>,
    max_seq_len: usize,
) -> Vec<Vec<TokenId>> {
    lines
        .into_iter()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut ids = vocab.encode(l, true);
            if ids.len() > max_seq_len {
                ids.truncate(max_seq_len - 1);
                ids.push(EOS);
            }
            ids
        })
        .filter(|ids| ids.iter().any(|&t| t >= BYTE_OFFSET))
        .collect()
}

/// Mean cross-entropy over every masked position in the batch and its
/// gradient in the flat parameter layout.
pub fn mlm_loss_and_grads(encoder: &Encoder, batch: &[MaskedSequence]) -> Result<(f64, Vec<f64>), EncoderError> {
    batch_loss(encoder, batch, None, true).map(|(loss, grads)| (loss, grads.unwrap()))
}

fn batch_loss(
    encoder: &Encoder,
    batch: &[MaskedSequence],
    mut dropout: Option<&mut rng::Rng>,
    with_grads: bool,
) -> Result<(f64, Option<Vec<f64>>), EncoderError> {
    let count: usize = batch.iter().map(|m| m.targets.len()).sum();
    if batch.is_empty() || count == 0 {
        return Err(EncoderError::EmptyBatch);
    }
    let mut grads = with_grads.then(|| vec![0.0; encoder.weights().len()]);
    let mut total = 0.0;
    for seq in batch {
        let mode = match dropout.as_deref_mut() {
            Some(r) => Mode::Train(r),
            None => Mode::Eval,
        };
        total += encoder.mlm_sequence(&seq.corrupted, &seq.targets, mode, grads.as_deref_mut())?;
    }
    let scale = 1.0 / count as f64;
    if let Some(g) = grads.as_mut() {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total * scale, grads))
}

fn perplexity(encoder: &Encoder, eval: &[MaskedSequence]) -> Result<f64, EncoderError> {
    Ok(batch_loss(encoder, eval, None, false)?.0.exp())
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    decay_mask: Vec<bool>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.98;
const ADAM_EPS: f64 = 1e-6;

impl AdamW {
    fn new(encoder: &Encoder) -> Self {
        let n = encoder.weights().len();
        let mut decay_mask = vec![false; n];
        for t in encoder.layout().tensors.iter().filter(|t| t.is_matrix()) {
            decay_mask[t.range()].fill(true);
        }
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            decay_mask,
            step: 0,
        }
    }

    fn update(&mut self, weights: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for i in 0..weights.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            if self.decay_mask[i] {
                weights[i] -= lr * weight_decay * weights[i];
            }
            weights[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// Linear warmup to the peak rate, then linear decay towards zero.
fn learning_rate(config: &TrainConfig, step: usize, total: usize) -> f64 {
    let warmup = ((config.warmup_fraction * total as f64).round() as usize).max(1);
    if step < warmup {
        config.learning_rate * (step + 1) as f64 / warmup as f64
    } else {
        config.learning_rate * (total - step) as f64 / (total - warmup).max(1) as f64
    }
}

fn mask_all(
    sequences: &[Vec<TokenId>],
    mask_rate: f64,
    vocab_size: usize,
    rng: &mut rng::Rng,
) -> Result<Vec<MaskedSequence>, EncoderError> {
    sequences.iter().map(|s| mask_with(s, mask_rate, vocab_size, rng)).collect()
}

/// Masked-LM training. Each sequence is one segment; there is no paired
/// segment input and no next-sentence objective.
pub fn train_mlm(
    params: &EncoderParams,
    sequences: &[Vec<TokenId>],
    config: &TrainConfig,
) -> Result<(EncoderParams, LossTrace), EncoderError> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok((params.clone(), LossTrace::default()));
    }
    if sequences.is_empty() {
        return Err(EncoderError::EmptyBatch);
    }
    let mut encoder = Encoder::new(params);
    let ecfg = encoder.config().clone();
    for s in sequences {
        encoder.check_ids(s)?;
    }

    let seed = config.seed;
    let eval_stride = sequences.len().div_ceil(EVAL_SEQUENCES);
    let eval_source: Vec<Vec<TokenId>> = sequences.iter().step_by(eval_stride).cloned().collect();
    let eval = mask_all(&eval_source, ecfg.mask_rate, ecfg.vocab_size, &mut rng::keyed(seed, "mlm-eval-masks"))?;

    let mut trace = LossTrace {
        initial_perplexity: Some(perplexity(&encoder, &eval)?),
        ..LossTrace::default()
    };

    let steps_per_epoch = sequences.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut adam = AdamW::new(&encoder);
    let mut shuffle_rng = rng::keyed(seed, "mlm-shuffle");
    let mut dropout_rng = rng::keyed(seed, "mlm-dropout");
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let static_masks = if config.dynamic_masking {
        None
    } else {
        Some(mask_all(sequences, ecfg.mask_rate, ecfg.vocab_size, &mut rng::keyed(seed, "mlm-masks-0"))?)
    };

    for epoch in 0..config.epochs {
        let fresh;
        let masks = match &static_masks {
            Some(m) => m,
            None => {
                let mut r = rng::keyed(seed, &format!("mlm-masks-{epoch}"));
                fresh = mask_all(sequences, ecfg.mask_rate, ecfg.vocab_size, &mut r)?;
                &fresh
            }
        };
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<MaskedSequence> = chunk.iter().map(|&i| masks[i].clone()).collect();
            let (loss, grads) = batch_loss(&encoder, &batch, Some(&mut dropout_rng), true)?;
            let lr = learning_rate(config, trace.step_losses.len(), total_steps);
            adam.update(encoder.weights_mut(), &grads.unwrap(), lr, config.weight_decay);
            trace.step_losses.push(loss);
        }
        trace.epoch_perplexity.push(perplexity(&encoder, &eval)?);
    }
    trace.final_perplexity = trace.epoch_perplexity.last().copied();
    Ok((encoder.to_params(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_encoder, mlm_mask, EncoderConfig};
    use crate::tokenizer::{BOS, MASK};

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            hidden_size: 8,
            ffn_size: 16,
            max_seq_len: 32,
            vocab_size: 300,
            dropout: 0.0,
            mask_rate: 0.15,
            seed: 9,
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut params = init_encoder(&tiny()).unwrap();
        params.values.fill(0.0);
        let enc = Encoder::new(&params);
        let seq = mlm_mask(&[BOS, 50, 60, 70, 80, EOS], 0.5, 300, 1).unwrap();
        let (loss, _) = mlm_loss_and_grads(&enc, &[seq]).unwrap();
        assert!((loss - 300f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn duplicated_batch_and_unmasked_targets() {
        let enc = Encoder::new(&init_encoder(&tiny()).unwrap());
        let seq = mlm_mask(&[BOS, 50, 60, 70, 80, 90, EOS], 0.3, 300, 2).unwrap();
        let (one, g1) = mlm_loss_and_grads(&enc, std::slice::from_ref(&seq)).unwrap();
        let (two, g2) = mlm_loss_and_grads(&enc, &[seq.clone(), seq.clone()]).unwrap();
        assert!((one - two).abs() < 1e-12);
        assert!(g1.iter().zip(&g2).all(|(a, b)| (a - b).abs() < 1e-12));

        // The loss only reads the original ids at selected positions.
        let mut altered = seq.clone();
        let masked: Vec<usize> = seq.targets.iter().map(|t| t.0).collect();
        let free = (1..6).find(|p| !masked.contains(p)).unwrap();
        let original = [BOS, 50, 60, 70, 80, 90, EOS];
        let mut other = original;
        other[free] = 99;
        altered.targets = crate::encoder::targets_from(&other, &masked);
        assert_eq!(mlm_loss_and_grads(&enc, &[altered]).unwrap().0, one);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let params = init_encoder(&tiny()).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let (out, trace) = train_mlm(&params, &[vec![BOS, 50, EOS]], &cfg).unwrap();
        assert_eq!(out, params);
        assert_eq!(trace, LossTrace::default());
    }

    #[test]
    fn learns_and_is_deterministic() {
        let params = init_encoder(&tiny()).unwrap();
        let seqs: Vec<Vec<TokenId>> = (0..40)
            .map(|i| vec![BOS, 40 + (i % 4), 100, 101, 102, 103, 104, EOS])
            .collect();
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 8,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (a, ta) = train_mlm(&params, &seqs, &cfg).unwrap();
        let (b, tb) = train_mlm(&params, &seqs, &cfg).unwrap();
        assert_eq!(a.payload_bytes(), b.payload_bytes());
        assert_eq!(ta, tb);
        assert_eq!(ta.step_losses.len(), 8 * 5);
        assert!(ta.epoch_perplexity.iter().all(|&p| p >= 1.0));
        assert!(ta.final_perplexity.unwrap() < 0.5 * ta.initial_perplexity.unwrap());
    }

    #[test]
    fn truncation_keeps_eos() {
        let vocab = BbpeVocab::from_merges(300, vec![]).unwrap();
        let seqs = prepare_sequences(&vocab, ["abcdefgh", "", "xy"], 5);
        assert_eq!(seqs, vec![vec![BOS, 101, 102, 103, EOS], vec![BOS, 124, 125, EOS]]);
        assert!(!seqs.iter().flatten().any(|&t| t == MASK));
    }
}
