use alloc::string::String;
use alloc::vec::Vec;

use super::lexicon::SynonymLexicon;
use crate::rng::SeededStream;

/// Synonym-replacement augmentation.
///
/// Draw order, which seeded tests replay:
/// 1. Left to right, one `uniform` per eligible word (one with a non-empty
///    lexicon entry); the word is selected when the draw is `< p`.
/// 2. If `p > 0`, some word is eligible and none was selected, one
///    `index(eligible_count)` picks a word to force.
/// 3. Left to right over the selected words, one `index(synonym_count)`
///    picks the replacement.
///
/// The output always has the input's length.
pub fn augment(words: &[String], lex: &SynonymLexicon, p: f64, rng: &mut SeededStream) -> Vec<String> {
    let eligible: Vec<usize> = (0..words.len()).filter(|&i| lex.is_eligible(&words[i])).collect();
    let mut selected: Vec<usize> = eligible.iter().copied().filter(|_| rng.bernoulli(p)).collect();
    if p > 0.0 && selected.is_empty() && !eligible.is_empty() {
        selected.push(eligible[rng.index(eligible.len())]);
    }
    let mut out = words.to_vec();
    for i in selected {
        let syns = lex.synonyms(&words[i]);
        out[i] = syns[rng.index(syns.len())].clone();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::words;

    #[test]
    fn empty_lexicon_is_identity() {
        let w = words("good movie");
        let mut rng = SeededStream::new(1);
        assert_eq!(augment(&w, &SynonymLexicon::new(), 0.5, &mut rng), w);
    }

    #[test]
    fn p_one_replaces_everything_eligible() {
        let mut lex = SynonymLexicon::new();
        lex.insert("good", &["fine"]);
        let mut rng = SeededStream::new(1);
        assert_eq!(augment(&words("good good"), &lex, 1.0, &mut rng), words("fine fine"));
    }

    #[test]
    fn p_zero_changes_nothing() {
        let mut lex = SynonymLexicon::new();
        lex.insert("good", &["fine"]);
        let mut rng = SeededStream::new(1);
        let w = words("good movie good");
        assert_eq!(augment(&w, &lex, 0.0, &mut rng), w);
    }

    #[test]
    fn small_p_still_forces_one_replacement() {
        let mut lex = SynonymLexicon::new();
        lex.insert("good", &["fine"]);
        let w = words("good movie good");
        for seed in 0..50 {
            let out = augment(&w, &lex, 1e-9, &mut SeededStream::new(seed));
            assert_eq!(out.iter().filter(|t| *t == "fine").count(), 1);
        }
    }
}
