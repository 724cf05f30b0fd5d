use alloc::format;
use alloc::vec::Vec;

use super::{cosine_lr, Adam, RunLog, RunRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{EncoderState, Mode};
use crate::numerics::{Tape, Tensor};
use crate::robusteval::argmax;
use crate::rng::SeededStream;
use crate::textpipe::{batch, LabeledExample, Vocabulary};

/// Result of [`finetune`]: the trained encoder and one log record per step.
///
/// Log records carry the cross-entropy in `total_loss`; the pretraining-only
/// columns (`mlm_loss`, `align_loss`, `align_metric`, `uniformity_metric`)
/// are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneRun {
    pub model: EncoderState,
    pub log: RunLog,
}

/// Cross-entropy training of the encoder and classifier head.
///
/// Mini-batches follow a per-epoch Fisher-Yates permutation drawn from a
/// stream seeded with `cfg.seed`. Labels are checked up front; an
/// out-of-range label is a data error naming its line.
pub fn finetune(
    mut model: EncoderState,
    data: &[LabeledExample],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    mut clock: impl FnMut() -> f64,
) -> Result<FinetuneRun> {
    cfg.validate()?;
    let classes = model.config().num_classes;
    if let Some(bad) = data.iter().find(|e| e.label >= classes) {
        return Err(Error::Data {
            line: bad.line,
            msg: format!("label {} outside 0..{}", bad.label, classes),
        });
    }
    let mut log = RunLog::default();
    if cfg.steps == 0 {
        return Ok(FinetuneRun { model, log });
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("labeled dataset"));
    }
    let max_len = cfg.max_len.min(model.config().max_len);
    let mut rng = SeededStream::new(cfg.seed);
    let mut adam = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for step in 0..cfg.steps {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        while picked.len() < cfg.batch_size.min(data.len()) {
            if cursor >= order.len() {
                order = (0..data.len()).collect();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.index(i + 1));
                }
                cursor = 0;
            }
            picked.push(&data[order[cursor]]);
            cursor += 1;
        }
        let texts: Vec<&str> = picked.iter().map(|e| e.text.as_str()).collect();
        let labels: Vec<usize> = picked.iter().map(|e| e.label).collect();
        let x = batch(&texts, vocab, max_len)?;

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true)?;
        let enc = model.encode(&mut tape, &bound, &x, Mode::Train)?;
        let logits = model.classify(&mut tape, &bound, enc.pooled)?;
        let logp = tape.log_softmax(logits)?;
        let ll = tape.pick(logp, &labels)?;
        let mean = tape.mean(ll)?;
        let loss = tape.neg(mean)?;
        let grads = tape.backward(loss)?;
        let g: Vec<Option<Tensor>> = bound.vars().iter().map(|&v| grads.get(v)).collect();
        let lr = cosine_lr(step, cfg.horizon(), cfg.lr);
        adam.step(model.params_mut(), &g, lr);
        if !model.params().iter().all(Tensor::all_finite) {
            return Err(Error::NonFinite("parameters after optimizer step"));
        }
        log.push(RunRecord {
            step: step + 1,
            total_loss: tape.value(loss).item(),
            mlm_loss: 0.0,
            align_loss: 0.0,
            lr,
            align_metric: 0.0,
            uniformity_metric: 0.0,
            seconds: clock(),
        })?;
    }
    Ok(FinetuneRun { model, log })
}

/// Predicted class (argmax, lowest index on ties) for each text.
pub fn predict(model: &EncoderState, texts: &[&str], vocab: &Vocabulary, max_len: usize) -> Result<Vec<usize>> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let p = model.predict_proba(&batch(texts, vocab, max_len.min(model.config().max_len))?)?;
    Ok(p.rows().map(argmax).collect())
}

/// Fraction of examples whose predicted class equals the label.
pub fn accuracy(model: &EncoderState, data: &[LabeledExample], vocab: &Vocabulary, max_len: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("accuracy"));
    }
    let texts: Vec<&str> = data.iter().map(|e| e.text.as_str()).collect();
    let pred = predict(model, &texts, vocab, max_len)?;
    let hits = pred.iter().zip(data).filter(|(p, e)| **p == e.label).count();
    Ok(hits as f64 / data.len() as f64)
}
