use alloc::string::String;
use alloc::vec::Vec;

use super::{argmax, Classifier, SentenceEncoder};
use crate::error::{Error, Result};
use crate::numerics::cosine_similarity;
use crate::rng::SeededStream;
use crate::textpipe::{augment, words, SynonymLexicon};

/// The robustness criterion for one perturbation: the representation stays
/// within cosine `eps` of the original AND the predicted label is
/// unchanged.
pub fn passes(cosine: f64, flipped: bool, eps: f64) -> bool {
    cosine >= eps && !flipped
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceRecord {
    /// Position of the text in the input list.
    pub index: usize,
    pub perturbation_id: usize,
    pub original: String,
    pub perturbed: String,
    pub cosine: f64,
    pub flipped: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub eps: f64,
    pub records: Vec<InvarianceRecord>,
    /// Texts without any lexicon-eligible word; excluded from aggregates.
    pub no_perturbation: Vec<usize>,
}

impl InvarianceReport {
    pub fn flip_rate(&self) -> f64 {
        self.rate(|r| r.flipped)
    }

    pub fn pass_rate(&self) -> f64 {
        self.rate(|r| r.pass)
    }

    fn rate(&self, f: impl Fn(&InvarianceRecord) -> bool) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| f(r)).count() as f64 / self.records.len() as f64
    }

    pub fn mean_cosine(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.cosine).sum::<f64>() / self.records.len() as f64
    }

    pub fn min_cosine(&self) -> f64 {
        self.records.iter().map(|r| r.cosine).fold(f64::INFINITY, f64::min)
    }
}

/// Perturbs every text `k` times with [`augment`] at rate `p` and compares
/// each perturbation with its original.
///
/// Draw order: texts in input order; for a text with at least one eligible
/// word, `k` consecutive `augment` calls on the shared stream. Texts with
/// no eligible word consume nothing and are listed in `no_perturbation`.
#[allow(clippy::too_many_arguments)]
pub fn invariance_test<M: SentenceEncoder + Classifier + ?Sized>(
    model: &M,
    texts: &[String],
    lex: &SynonymLexicon,
    k: usize,
    p: f64,
    eps: f64,
    rng: &mut SeededStream,
) -> Result<InvarianceReport> {
    if k == 0 {
        return Err(Error::Config("invariance test needs k >= 1 perturbations".into()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Config("invariance threshold eps must lie in (0, 1]".into()));
    }
    let mut inputs: Vec<Vec<String>> = Vec::new();
    let mut owners = Vec::new();
    let mut no_perturbation = Vec::new();
    for (i, t) in texts.iter().enumerate() {
        let w = words(t);
        if !w.iter().any(|x| lex.is_eligible(x)) {
            no_perturbation.push(i);
            continue;
        }
        let orig = inputs.len();
        inputs.push(w.clone());
        for j in 0..k {
            owners.push((i, j, orig, inputs.len()));
            inputs.push(augment(&w, lex, p, rng));
        }
    }
    let reps = model.encode(&inputs)?;
    let probs = model.proba(&inputs)?;
    let mut records = Vec::with_capacity(owners.len());
    for (index, perturbation_id, o, q) in owners {
        let cosine = cosine_similarity(&reps[o], &reps[q])?;
        let flipped = argmax(&probs[o]) != argmax(&probs[q]);
        records.push(InvarianceRecord {
            index,
            perturbation_id,
            original: inputs[o].join(" "),
            perturbed: inputs[q].join(" "),
            cosine,
            flipped,
            pass: passes(cosine, flipped, eps),
        });
    }
    Ok(InvarianceReport {
        eps,
        records,
        no_perturbation,
    })
}
