use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::mask::{mask_with, MaskedSequence};
use super::model::Encoder;
use super::train::mlm_loss_and_grads;
use super::{init_encoder, EncoderConfig, EncoderError};
use crate::rng;
use crate::tokenizer::{TokenId, BOS, BYTE_OFFSET, EOS};

const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute rather than relative terms.
const FLOOR: f64 = 1e-6;
const SEQ_LEN: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Worst error per parameter family.
    pub per_family: BTreeMap<String, f64>,
    pub probes: usize,
}

fn loss(encoder: &Encoder, batch: &[MaskedSequence]) -> f64 {
    mlm_loss_and_grads(encoder, batch).map(|(l, _)| l).unwrap()
}

/// Compares analytic gradients with central differences on `num_probes`
/// random coordinates of every tensor. Dropout is forced off.
pub fn gradient_check(config: &EncoderConfig, seed: u64, num_probes: usize) -> Result<GradCheckReport, EncoderError> {
    let config = EncoderConfig {
        dropout: 0.0,
        seed,
        ..config.clone()
    };
    let mut encoder = Encoder::new(&init_encoder(&config)?);
    let mut rng = rng::keyed(seed, "gradcheck");

    // Move away from the symmetric initialisation so every family has a
    // gradient well above the finite-difference noise.
    let noise = Normal::new(0.0, 0.3).unwrap();
    let tensors = encoder.layout().tensors.clone();
    for t in &tensors {
        let scale = if t.is_matrix() { 1.0 } else { 0.5 };
        for w in &mut encoder.weights_mut()[t.range()] {
            *w += scale * noise.sample(&mut rng);
        }
    }

    let len = SEQ_LEN.min(config.max_seq_len);
    let batch: Vec<MaskedSequence> = (0..2)
        .map(|_| {
            let mut ids: Vec<TokenId> = vec![BOS];
            ids.extend((2..len).map(|_| rng.random_range(BYTE_OFFSET..config.vocab_size as TokenId)));
            ids.push(EOS);
            mask_with(&ids, 0.3, config.vocab_size, &mut rng)
        })
        .collect::<Result<_, _>>()?;

    let (_, grads) = mlm_loss_and_grads(&encoder, &batch)?;
    let mut per_family: BTreeMap<String, f64> = BTreeMap::new();
    let mut probes = 0;
    for t in &tensors {
        // Rows of the position table past the sequence length never receive gradient.
        let usable = if t.name == "pos_emb" { len * config.hidden_size } else { t.len() };
        for _ in 0..num_probes {
            let i = t.offset + rng.random_range(0..usable);
            let original = encoder.weights()[i];
            encoder.weights_mut()[i] = original + STEP;
            let plus = loss(&encoder, &batch);
            encoder.weights_mut()[i] = original - STEP;
            let minus = loss(&encoder, &batch);
            encoder.weights_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * STEP);
            let analytic = grads[i];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            let worst = per_family.entry(t.family().to_owned()).or_insert(0.0);
            *worst = worst.max(err);
            probes += 1;
        }
    }
    let max_relative_error = per_family.values().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        per_family,
        probes,
    })
}
