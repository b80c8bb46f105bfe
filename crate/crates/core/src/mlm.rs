//! Masked-language-model corruption and loss.
//!
//! Corruption selects an exact count of positions per sequence —
//! `round(ratio × eligible)` without replacement — rather than per-token
//! coin flips, so the realized masking fraction is deterministic. Special
//! tokens are never eligible. Each sequence corrupts on its own RNG stream
//! derived from `(seed, sequence index)`, which makes batches reproducible
//! and lets a resumed run continue from a counter alone.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Elem, Graph, Tensor};
use crate::tokenizer::{Vocab, NUM_SPECIALS};

/// How a selected position is rewritten.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskingStrategy {
    /// Every selected position becomes the mask token.
    MaskOnly,
    /// Mask with p=0.8, uniformly random non-special token with p=0.1,
    /// left unchanged with p=0.1.
    Bert801010,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MaskingPolicy {
    /// Fraction of eligible tokens to predict, in (0, 1).
    pub ratio: f64,
    pub strategy: MaskingStrategy,
    pub seed: u64,
}

impl MaskingPolicy {
    /// Heavy corruption used for the main pretraining phase.
    pub fn pretrain(seed: u64) -> MaskingPolicy {
        MaskingPolicy { ratio: 0.50, strategy: MaskingStrategy::Bert801010, seed }
    }

    /// Light corruption used for the decay/annealing phase.
    pub fn anneal(seed: u64) -> MaskingPolicy {
        MaskingPolicy { ratio: 0.10, strategy: MaskingStrategy::Bert801010, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!(
                "masking ratio {} outside (0, 1)",
                self.ratio
            )));
        }
        Ok(())
    }
}

/// A corrupted batch plus everything the loss needs to score it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    /// Model input after corruption.
    pub corrupted: Vec<u32>,
    /// Ground-truth ids (the prediction targets).
    pub original: Vec<u32>,
    /// Positions the loss is computed at.
    pub selected: Vec<bool>,
    /// Padding positions (never selected, excluded from attention keys).
    pub pad: Vec<bool>,
    pub seq_len: usize,
}

impl MaskedBatch {
    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn eligible_count(&self) -> usize {
        self.original
            .iter()
            .filter(|&&id| !Vocab::is_special(id))
            .count()
    }

    /// Realized fraction of eligible tokens selected for prediction.
    pub fn masked_fraction(&self) -> f64 {
        let eligible = self.eligible_count();
        if eligible == 0 {
            0.0
        } else {
            self.selected_count() as f64 / eligible as f64
        }
    }
}

/// Corrupt `batch × seq_len` token ids (row-major) for MLM training.
///
/// Sequence `b` draws from the stream `(policy.seed, first_sequence_index + b)`,
/// with a fixed draw order: the without-replacement selection first, then one
/// (or two) draws per selected position in ascending position order.
pub fn apply_masking(
    ids: &[u32],
    seq_len: usize,
    vocab_size: usize,
    policy: &MaskingPolicy,
    first_sequence_index: u64,
) -> Result<MaskedBatch> {
    policy.validate()?;
    if seq_len == 0 || ids.is_empty() || ids.len() % seq_len != 0 {
        return Err(Error::invalid(format!(
            "{} ids do not form whole sequences of length {seq_len}",
            ids.len()
        )));
    }
    if vocab_size <= NUM_SPECIALS {
        return Err(Error::invalid(format!(
            "vocab of {vocab_size} has no non-special tokens to sample"
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab_size) {
        return Err(Error::invalid(format!(
            "token id {bad} out of range for vocab of {vocab_size}"
        )));
    }

    let batch = ids.len() / seq_len;
    let mut corrupted = ids.to_vec();
    let mut selected = vec![false; ids.len()];
    let pad: Vec<bool> = ids.iter().map(|&id| id == Vocab::PAD).collect();

    for b in 0..batch {
        let row = &ids[b * seq_len..(b + 1) * seq_len];
        let mut eligible: Vec<usize> = row
            .iter()
            .enumerate()
            .filter(|(_, &id)| !Vocab::is_special(id))
            .map(|(i, _)| b * seq_len + i)
            .collect();
        if eligible.is_empty() {
            return Err(Error::EmptySelection(
                "apply_masking: sequence has no eligible (non-special) tokens",
            ));
        }
        let n_select = (policy.ratio * eligible.len() as f64).round() as usize;
        let mut rng = stream_rng(policy.seed, "mask", first_sequence_index + b as u64);

        // Partial Fisher–Yates: the first n_select entries become the sample.
        for i in 0..n_select {
            let j = rng.gen_range(i..eligible.len());
            eligible.swap(i, j);
        }
        for &pos in &eligible[..n_select] {
            selected[pos] = true;
        }

        // Corrupt in ascending position order so the draw sequence is fixed.
        for pos in b * seq_len..(b + 1) * seq_len {
            if !selected[pos] {
                continue;
            }
            corrupted[pos] = match policy.strategy {
                MaskingStrategy::MaskOnly => Vocab::MASK,
                MaskingStrategy::Bert801010 => {
                    let u: f64 = rng.gen();
                    if u < 0.8 {
                        Vocab::MASK
                    } else if u < 0.9 {
                        rng.gen_range(NUM_SPECIALS as u32..vocab_size as u32)
                    } else {
                        ids[pos]
                    }
                }
            };
        }
    }

    Ok(MaskedBatch {
        corrupted,
        original: ids.to_vec(),
        selected,
        pad,
        seq_len,
    })
}

/// Mean cross-entropy of the original ids at the selected positions.
/// Unselected positions contribute exactly zero loss and zero gradient.
pub fn mlm_loss<F: Elem>(
    g: &mut Graph<F>,
    logits: &Tensor<F>,
    batch: &MaskedBatch,
) -> Result<Tensor<F>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != batch.original.len() {
        return Err(Error::invalid(format!(
            "mlm_loss: logits shape {shape:?} does not cover {} positions",
            batch.original.len()
        )));
    }
    let targets: Vec<usize> = batch.original.iter().map(|&id| id as usize).collect();
    g.softmax_cross_entropy(logits, &targets, &batch.selected)
}
