use alloc::vec;

use super::batch::TokenizedBatch;
use super::vocab::{MASK, RESERVED};
use crate::error::{Error, Result};
use crate::rng::SeededStream;

/// Target value at positions the MLM head does not predict.
pub const NOT_PREDICTED: i64 = -1;

/// BERT-style corruption.
///
/// Positions holding a reserved id (`[PAD]`, `[UNK]`, `[MASK]`, `[CLS]`,
/// `[SEP]`) are never selected. Draw order, row-major over positions:
/// 1. one `uniform` per eligible position; selected when `< rate`;
/// 2. for a selected position, one `uniform` `v`: `v < 0.8` writes `[MASK]`,
///    `v < 0.9` draws one `index(vocab_size - 5)` and writes that ordinary
///    token, otherwise the token is kept.
pub fn mask_for_mlm(
    batch: &TokenizedBatch,
    rate: f64,
    vocab_size: usize,
    rng: &mut SeededStream,
) -> Result<TokenizedBatch> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config("mlm rate must lie in [0, 1]".into()));
    }
    if vocab_size <= RESERVED {
        return Err(Error::Config("vocabulary has no ordinary tokens".into()));
    }
    let mut out = batch.clone();
    let mut targets = vec![NOT_PREDICTED; batch.ids().len()];
    for (pos, &id) in batch.ids().iter().enumerate() {
        if id < RESERVED || !rng.bernoulli(rate) {
            continue;
        }
        targets[pos] = id as i64;
        let v = rng.uniform();
        if v < 0.8 {
            out.ids_mut()[pos] = MASK;
        } else if v < 0.9 {
            out.ids_mut()[pos] = RESERVED + rng.index(vocab_size - RESERVED);
        }
    }
    out.mlm_targets = Some(targets);
    Ok(out)
}
