use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{argmax, Classifier};
use crate::error::{Error, Result};
use crate::numerics::softmax;
use crate::textpipe::{words, SynonymLexicon, RESERVED_TOKENS, UNK};

#[derive(Debug, Clone, PartialEq)]
pub struct Substitution {
    pub position: usize,
    pub original: String,
    pub replacement: String,
    /// Priority `H = dP(w*) * softmax(S)_i` under which it was applied.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub original: String,
    pub adversarial: String,
    pub true_label: usize,
    /// Label predicted on the original text.
    pub initial_label: usize,
    /// Label predicted on `adversarial`.
    pub final_label: usize,
    pub substitutions: Vec<Substitution>,
    /// The final prediction differs from `true_label`.
    pub success: bool,
    /// Sentences submitted to the classifier.
    pub queries: usize,
}

struct Counted<'a, C: ?Sized> {
    clf: &'a C,
    queries: usize,
}

impl<C: Classifier + ?Sized> Counted<'_, C> {
    fn proba(&mut self, inputs: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        self.queries += inputs.len();
        let out = self.clf.proba(inputs)?;
        if out.len() != inputs.len() {
            return Err(Error::Contract("classifier returned the wrong number of rows".into()));
        }
        Ok(out)
    }
}

/// Probability-weighted word saliency attack with synonym substitution.
///
/// With `P(x)` the probability of `true_label`:
/// 1. saliency `S_i = P(x) - P(x with word i -> [UNK])` for every word;
/// 2. for each word with synonyms, the substitute `w*` maximizing
///    `dP_i = P(x) - P(x with word i -> w)` (first in lexicon order on ties);
/// 3. `H_i = dP_i(w*) * softmax(S)_i`;
/// 4. words with `dP_i(w*) > 0` are substituted in descending `H` order
///    (lower position first on ties), re-querying after each, until the
///    predicted label differs from `true_label` or the candidates run out.
///
/// A text already misclassified is returned unchanged with `success`.
/// Queries never exceed `1 + 2W + sum of synonym counts`.
pub fn pwws_attack<C: Classifier + ?Sized>(clf: &C, text: &str, true_label: usize, lex: &SynonymLexicon) -> Result<AttackResult> {
    let orig = words(text);
    if orig.is_empty() {
        return Err(Error::EmptyInput("pwws_attack text"));
    }
    let mut q = Counted { clf, queries: 0 };
    let p0 = q.proba(core::slice::from_ref(&orig))?.remove(0);
    if true_label >= p0.len() {
        return Err(Error::Contract("true label outside the classifier's classes".into()));
    }
    let initial_label = argmax(&p0);
    let mut result = AttackResult {
        original: orig.join(" "),
        adversarial: orig.join(" "),
        true_label,
        initial_label,
        final_label: initial_label,
        substitutions: Vec::new(),
        success: initial_label != true_label,
        queries: 0,
    };
    if result.success {
        result.queries = q.queries;
        return Ok(result);
    }
    let py = p0[true_label];

    let unk = RESERVED_TOKENS[UNK];
    let masked: Vec<Vec<String>> = (0..orig.len()).map(|i| replaced(&orig, i, unk)).collect();
    let saliency: Vec<f64> = q.proba(&masked)?.iter().map(|p| py - p[true_label]).collect();
    let weights = softmax(&saliency);

    let mut variants = Vec::new();
    let mut slots = Vec::new();
    for (i, w) in orig.iter().enumerate() {
        for s in lex.synonyms(w) {
            slots.push((i, s.clone()));
            variants.push(replaced(&orig, i, s));
        }
    }
    let probs = q.proba(&variants)?;
    // (position, substitute, dP, H)
    let mut cands: Vec<(usize, String, f64, f64)> = Vec::new();
    for ((i, s), p) in slots.into_iter().zip(&probs) {
        let dp = py - p[true_label];
        match cands.last_mut() {
            Some(c) if c.0 == i => {
                if dp > c.2 {
                    *c = (i, s, dp, 0.0);
                }
            }
            _ => cands.push((i, s, dp, 0.0)),
        }
    }
    cands.retain(|c| c.2 > 0.0);
    for c in &mut cands {
        c.3 = c.2 * weights[c.0];
    }
    cands.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.0.cmp(&b.0)));

    let mut cur = orig.clone();
    for (i, s, _, h) in cands {
        result.substitutions.push(Substitution {
            position: i,
            original: orig[i].clone(),
            replacement: s.clone(),
            score: h,
        });
        cur[i] = s;
        let label = argmax(&q.proba(core::slice::from_ref(&cur))?[0]);
        result.final_label = label;
        if label != true_label {
            result.success = true;
            break;
        }
    }
    result.adversarial = cur.join(" ");
    result.queries = q.queries;
    Ok(result)
}

fn replaced(w: &[String], i: usize, by: &str) -> Vec<String> {
    let mut out = w.to_vec();
    out[i] = by.to_string();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    struct Blind;

    impl Classifier for Blind {
        fn proba(&self, inputs: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
            Ok(vec![vec![0.8, 0.2]; inputs.len()])
        }
    }

    /// Class 1 iff the text contains "good".
    struct Keyword;

    impl Classifier for Keyword {
        fn proba(&self, inputs: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
            Ok(inputs
                .iter()
                .map(|w| if w.iter().any(|x| x == "good") { vec![0.1, 0.9] } else { vec![0.9, 0.1] })
                .collect())
        }
    }

    #[test]
    fn input_blind_classifier_resists() {
        let mut lex = SynonymLexicon::new();
        lex.insert("good", &["fine", "nice"]);
        let r = pwws_attack(&Blind, "good movie", 0, &lex).unwrap();
        assert!(!r.success);
        assert!(r.substitutions.is_empty());
        assert_eq!(r.adversarial, "good movie");
        assert_eq!(r.queries, 1 + 2 + 2);
    }

    #[test]
    fn single_word_flip() {
        let mut lex = SynonymLexicon::new();
        lex.insert("good", &["fine"]);
        let r = pwws_attack(&Keyword, "good", 1, &lex).unwrap();
        assert!(r.success);
        assert_eq!(r.adversarial, "fine");
        assert_eq!(r.substitutions.len(), 1);
        assert_eq!((r.initial_label, r.final_label), (1, 0));
        assert_eq!(r.queries, 4);
    }

    #[test]
    fn misclassified_input_is_untouched() {
        let r = pwws_attack(&Keyword, "bad", 1, &SynonymLexicon::new()).unwrap();
        assert!(r.success && r.substitutions.is_empty());
        assert_eq!(r.queries, 1);
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(pwws_attack(&Keyword, "  ", 0, &SynonymLexicon::new()).is_err());
    }
}
