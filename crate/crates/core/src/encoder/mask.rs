use rand::Rng as _;

use super::EncoderError;
use crate::rng::{self, Rng};
use crate::tokenizer::{TokenId, BYTE_OFFSET, MASK};

const RESAMPLE_ROUNDS: usize = 8;

/// A corrupted copy of a sequence and the original ids at the selected
/// positions, ordered by position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub corrupted: Vec<TokenId>,
    pub targets: Vec<(usize, TokenId)>,
}

impl MaskedSequence {
    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }
}

/// Target list for `positions` of `original`, sorted and deduplicated.
pub fn targets_from(original: &[TokenId], positions: &[usize]) -> Vec<(usize, TokenId)> {
    let mut positions = positions.to_vec();
    positions.sort_unstable();
    positions.dedup();
    positions.into_iter().map(|p| (p, original[p])).collect()
}

/// Selects each non-special position with probability `mask_rate`; selected
/// tokens become MASK (80%), a random non-special id (10%) or stay (10%).
pub fn mlm_mask(ids: &[TokenId], mask_rate: f64, vocab_size: usize, seed: u64) -> Result<MaskedSequence, EncoderError> {
    mask_with(ids, mask_rate, vocab_size, &mut rng::seeded(seed))
}

pub(crate) fn mask_with(
    ids: &[TokenId],
    mask_rate: f64,
    vocab_size: usize,
    rng: &mut Rng,
) -> Result<MaskedSequence, EncoderError> {
    let maskable: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] >= BYTE_OFFSET).collect();
    if maskable.is_empty() {
        return Err(EncoderError::NothingToMask);
    }
    let mut selected = Vec::new();
    for _ in 0..RESAMPLE_ROUNDS {
        selected = maskable.iter().copied().filter(|_| rng.random::<f64>() < mask_rate).collect();
        if !selected.is_empty() {
            break;
        }
    }
    if selected.is_empty() {
        selected.push(maskable[rng.random_range(0..maskable.len())]);
    }

    let mut corrupted = ids.to_vec();
    for &p in &selected {
        let roll: f64 = rng.random();
        if roll < 0.8 {
            corrupted[p] = MASK;
        } else if roll < 0.9 {
            corrupted[p] = rng.random_range(BYTE_OFFSET..vocab_size as TokenId);
        }
    }
    Ok(MaskedSequence {
        corrupted,
        targets: targets_from(ids, &selected),
    })
}
