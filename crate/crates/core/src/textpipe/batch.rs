use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::tokenize::tokenize;
use super::vocab::{Vocabulary, CLS, PAD};
use crate::error::{Error, Result};

/// Padded `[B x L]` token-id matrix with its attention mask and optional
/// labels and MLM targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedBatch {
    batch_size: usize,
    seq_len: usize,
    ids: Vec<usize>,
    mask: Vec<u8>,
    pub labels: Option<Vec<usize>>,
    /// Original id at predicted positions, [`super::NOT_PREDICTED`] elsewhere.
    pub mlm_targets: Option<Vec<i64>>,
}

impl TokenizedBatch {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Row-major `[B x L]` ids.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub(crate) fn ids_mut(&mut self) -> &mut [usize] {
        &mut self.ids
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.seq_len..(b + 1) * self.seq_len]
    }

    pub fn mask_row(&self, b: usize) -> &[u8] {
        &self.mask[b * self.seq_len..(b + 1) * self.seq_len]
    }

    /// Number of non-PAD positions in row `b`.
    pub fn row_len(&self, b: usize) -> usize {
        self.mask_row(b).iter().filter(|&&m| m == 1).count()
    }

    /// The sub-batch of the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(rows.len() * self.seq_len);
        let mut mask = Vec::with_capacity(rows.len() * self.seq_len);
        for &r in rows {
            ids.extend_from_slice(self.row(r));
            mask.extend_from_slice(self.mask_row(r));
        }
        Self {
            batch_size: rows.len(),
            seq_len: self.seq_len,
            ids,
            mask,
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect()),
            mlm_targets: self.mlm_targets.as_ref().map(|t| {
                rows.iter()
                    .flat_map(|&r| t[r * self.seq_len..(r + 1) * self.seq_len].iter().copied())
                    .collect()
            }),
        }
    }
}

/// Packs id rows (each starting with `[CLS]`) into a `[B x max_len]` batch.
pub fn batch_from_ids(rows: &[Vec<usize>], max_len: usize) -> Result<TokenizedBatch> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let mut ids = vec![PAD; rows.len() * max_len];
    let mut mask = vec![0u8; rows.len() * max_len];
    for (b, r) in rows.iter().enumerate() {
        if r.first() != Some(&CLS) || r.len() > max_len || r.contains(&PAD) {
            return Err(Error::Contract("batch rows must start with [CLS], hold no [PAD] and fit max_len".into()));
        }
        ids[b * max_len..b * max_len + r.len()].copy_from_slice(r);
        mask[b * max_len..b * max_len + r.len()].iter_mut().for_each(|m| *m = 1);
    }
    Ok(TokenizedBatch {
        batch_size: rows.len(),
        seq_len: max_len,
        ids,
        mask,
        labels: None,
        mlm_targets: None,
    })
}

pub fn batch<S: AsRef<str>>(texts: &[S], vocab: &Vocabulary, max_len: usize) -> Result<TokenizedBatch> {
    let rows = texts
        .iter()
        .map(|t| tokenize(t.as_ref(), vocab, max_len))
        .collect::<Result<Vec<_>>>()?;
    batch_from_ids(&rows, max_len)
}

/// Convenience: texts from words.
pub fn join_all(rows: &[Vec<String>]) -> Vec<String> {
    rows.iter().map(|w| w.join(" ")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_mask_contract() {
        let v = Vocabulary::from_words(["good", "movie"]);
        let b = batch(&["good movie", "good"], &v, 8).unwrap();
        assert_eq!((b.batch_size(), b.seq_len()), (2, 8));
        assert_eq!(b.ids().len(), 16);
        for (id, m) in b.ids().iter().zip(b.mask()) {
            assert_eq!(*m == 1, *id != PAD);
        }
        assert_eq!(b.row(0)[0], CLS);
        assert_eq!(b.row(1)[0], CLS);
        assert_eq!(b.row_len(0), 3);
        assert_eq!(b.row_len(1), 2);
    }
}
