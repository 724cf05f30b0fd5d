//! Robustness evaluation: synonym invariance tests, the PWWS attack, and
//! representation analyses (positive- vs random-pair cosines, PCA).
//!
//! Models are seen through two small traits over word sequences, so the
//! same code drives the tiny transformer and hand-written toy models.

mod analysis;
mod invariance;
mod pca;
mod pwws;

pub use analysis::{cosine_analysis, AnalysisRow};
pub use invariance::{invariance_test, passes, InvarianceRecord, InvarianceReport};
pub use pca::{project_2d, symmetric_eigen, Projection};
pub use pwws::{pwws_attack, AttackResult, Substitution};

use alloc::vec::Vec;
use alloc::string::String;

use crate::error::Result;
use crate::model::EncoderState;
use crate::textpipe::{batch_from_ids, tokenize_words, Vocabulary};

/// Maps word sequences to sentence vectors.
pub trait SentenceEncoder {
    fn encode(&self, inputs: &[Vec<String>]) -> Result<Vec<Vec<f64>>>;
}

/// Maps word sequences to class-probability rows.
pub trait Classifier {
    fn proba(&self, inputs: &[Vec<String>]) -> Result<Vec<Vec<f64>>>;
}

/// Which vector of the tiny transformer an adapter exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// Masked-mean pooled encoder output.
    Pooled,
    /// Projection-head output.
    Projected,
}

/// Evaluation-mode adapter for [`EncoderState`].
#[derive(Debug, Clone, Copy)]
pub struct ModelAdapter<'a> {
    pub model: &'a EncoderState,
    pub vocab: &'a Vocabulary,
    pub max_len: usize,
    pub repr: Representation,
}

impl<'a> ModelAdapter<'a> {
    pub fn new(model: &'a EncoderState, vocab: &'a Vocabulary, repr: Representation) -> Self {
        Self {
            model,
            vocab,
            max_len: model.config().max_len,
            repr,
        }
    }

    fn batch(&self, inputs: &[Vec<String>]) -> Result<crate::textpipe::TokenizedBatch> {
        let max_len = self.max_len.min(self.model.config().max_len);
        let rows = inputs
            .iter()
            .map(|w| tokenize_words(w, self.vocab, max_len))
            .collect::<Result<Vec<_>>>()?;
        let len = rows.iter().map(Vec::len).max().unwrap_or(1);
        batch_from_ids(&rows, len)
    }
}

impl SentenceEncoder for ModelAdapter<'_> {
    fn encode(&self, inputs: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let b = self.batch(inputs)?;
        let t = match self.repr {
            Representation::Pooled => self.model.embed(&b)?,
            Representation::Projected => self.model.embed_projected(&b)?,
        };
        Ok(t.rows().map(<[f64]>::to_vec).collect())
    }
}

impl Classifier for ModelAdapter<'_> {
    fn proba(&self, inputs: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let p = self.model.predict_proba(&self.batch(inputs)?)?;
        Ok(p.rows().map(<[f64]>::to_vec).collect())
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
