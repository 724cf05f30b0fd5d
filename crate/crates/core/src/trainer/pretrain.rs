use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{cosine_lr, Adam, RunLog, RunRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{EncoderState, Mode};
use crate::numerics::{normalized, Tape, Tensor};
use crate::objectives::{alignment_metric, mlm_loss_on_tape, symmetric_dcl_loss_on_tape, uniformity_metric, DualNetworks};
use crate::rng::SeededStream;
use crate::textpipe::{augment, batch_from_ids, mask_for_mlm, tokenize_words, words, SynonymLexicon, TokenizedBatch, Vocabulary};

/// Independent random streams of a pretraining run, forked from the seed in
/// this order: data order, augmentation, MLM corruption.
#[derive(Debug, Clone)]
pub struct StepRngs {
    pub data: SeededStream,
    pub augment: SeededStream,
    pub mask: SeededStream,
}

impl StepRngs {
    pub fn new(seed: u64) -> Self {
        let mut root = SeededStream::new(seed);
        let data = root.fork();
        let augment = root.fork();
        let mask = root.fork();
        Self { data, augment, mask }
    }
}

/// Builds `X` and its synonym augmentation `X'`, row-aligned and padded to
/// the longest row. Augmentation draws are consumed text by text.
pub fn augmented_pair(
    texts: &[String],
    vocab: &Vocabulary,
    lex: &SynonymLexicon,
    p: f64,
    max_len: usize,
    rng: &mut SeededStream,
) -> Result<(TokenizedBatch, TokenizedBatch)> {
    let mut rows = Vec::with_capacity(texts.len());
    let mut aug_rows = Vec::with_capacity(texts.len());
    for t in texts {
        let w = words(t);
        let a = augment(&w, lex, p, rng);
        rows.push(tokenize_words(&w, vocab, max_len)?);
        aug_rows.push(tokenize_words(&a, vocab, max_len)?);
    }
    let len = rows.iter().chain(&aug_rows).map(Vec::len).max().unwrap_or(1);
    Ok((batch_from_ids(&rows, len)?, batch_from_ids(&aug_rows, len)?))
}

/// One optimizer step on `texts`:
/// `lambda_mlm * MLM(mask(X)) + lambda_align * symmetric alignment(X, X')`,
/// back-propagated into the online network only, then an Adam step at the
/// cosine-decayed rate for `step` (0-based) and an EMA update of the target.
///
/// A term whose weight is zero is not evaluated at all, so it neither
/// consumes random draws nor touches normalization statistics. The
/// alignment/uniformity columns are measured in evaluation mode on the
/// L2-normalized online pooled vectors of `X` and `X'` before the update.
///
/// Any numerical failure is reported as [`Error::Aborted`] carrying the
/// offending batch.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_step(
    nets: &mut DualNetworks,
    adam: &mut Adam,
    texts: &[String],
    vocab: &Vocabulary,
    lex: &SynonymLexicon,
    cfg: &TrainConfig,
    step: u64,
    rngs: &mut StepRngs,
) -> Result<RunRecord> {
    if texts.is_empty() {
        return Err(Error::EmptyInput("pretrain batch"));
    }
    step_inner(nets, adam, texts, vocab, lex, cfg, step, rngs).map_err(|e| match e {
        e if e.is_numerical() => Error::Aborted {
            step: step + 1,
            cause: e.to_string(),
            batch: texts.to_vec(),
        },
        e => e,
    })
}

#[allow(clippy::too_many_arguments)]
fn step_inner(
    nets: &mut DualNetworks,
    adam: &mut Adam,
    texts: &[String],
    vocab: &Vocabulary,
    lex: &SynonymLexicon,
    cfg: &TrainConfig,
    step: u64,
    rngs: &mut StepRngs,
) -> Result<RunRecord> {
    let c = &cfg.contrast;
    let max_len = cfg.max_len.min(nets.online.config().max_len);
    let (x, x_aug) = augmented_pair(texts, vocab, lex, cfg.aug_p, max_len, &mut rngs.augment)?;
    let (align_metric, uniformity_metric) = pair_metrics(&nets.online, &x, &x_aug, c.align_alpha, c.uniformity_t)?;

    let mut tape = Tape::new();
    let ob = nets.online.bind(&mut tape, true)?;
    let zero = tape.constant(Tensor::scalar(0.0))?;
    let mlm = if c.lambda_mlm > 0.0 {
        let masked = mask_for_mlm(&x, cfg.mlm_rate, nets.online.config().vocab_size, &mut rngs.mask)?;
        let enc = nets.online.encode(&mut tape, &ob, &masked, Mode::Train)?;
        let logits = nets.online.mlm_logits(&mut tape, &ob, enc.states)?;
        mlm_loss_on_tape(&mut tape, logits, masked.mlm_targets.as_deref().unwrap_or(&[]))?
    } else {
        zero
    };
    let align = if c.lambda_align > 0.0 {
        let tb = nets.target.bind(&mut tape, false)?;
        symmetric_dcl_loss_on_tape(&mut tape, &mut nets.online, &ob, &mut nets.target, &tb, &x, &x_aug, Mode::Train)?.loss
    } else {
        zero
    };
    let wm = tape.scale(mlm, c.lambda_mlm)?;
    let wa = tape.scale(align, c.lambda_align)?;
    let total = tape.add(wm, wa)?;
    let total_loss = tape.value(total).item();
    if !total_loss.is_finite() {
        return Err(Error::NonFinite("pretraining loss"));
    }
    let grads = tape.backward(total)?;
    let g: Vec<Option<Tensor>> = ob.vars().iter().map(|&v| grads.get(v)).collect();

    let lr = cosine_lr(step, cfg.horizon(), cfg.lr);
    adam.step(nets.online.params_mut(), &g, lr);
    if !nets.online.params().iter().all(Tensor::all_finite) {
        return Err(Error::NonFinite("parameters after optimizer step"));
    }
    nets.ema_update()?;
    Ok(RunRecord {
        step: step + 1,
        total_loss,
        mlm_loss: tape.value(mlm).item(),
        align_loss: tape.value(align).item(),
        lr,
        align_metric,
        uniformity_metric,
        seconds: 0.0,
    })
}

/// Alignment metric over the rows of `x`/`x_aug` and uniformity metric over
/// the rows of `x`, on normalized eval-mode pooled vectors.
pub fn pair_metrics(enc: &EncoderState, x: &TokenizedBatch, x_aug: &TokenizedBatch, alpha: f64, t: f64) -> Result<(f64, f64)> {
    let a = enc.embed(x)?;
    let b = enc.embed(x_aug)?;
    let a: Vec<Vec<f64>> = a.rows().map(normalized).collect::<Result<_>>()?;
    let b: Vec<Vec<f64>> = b.rows().map(normalized).collect::<Result<_>>()?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = a.iter().cloned().zip(b).collect();
    Ok((alignment_metric(&pairs, alpha)?, uniformity_metric(&a, t)?))
}

/// State of a pretraining run: networks, optimizer, random streams and the
/// position in the shuffled corpus.
#[derive(Debug, Clone)]
pub struct PretrainRun {
    pub nets: DualNetworks,
    pub adam: Adam,
    pub rngs: StepRngs,
    pub cfg: TrainConfig,
    /// Optimizer steps taken so far.
    pub step: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl PretrainRun {
    pub fn new(mut nets: DualNetworks, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        nets.tau_ema = cfg.tau_ema;
        Ok(Self {
            nets,
            adam: Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps),
            rngs: StepRngs::new(cfg.seed),
            cfg,
            step: 0,
            order: Vec::new(),
            cursor: 0,
        })
    }

    /// The next `batch_size` texts. The corpus is visited in a fresh
    /// Fisher-Yates permutation each epoch; a batch may straddle epochs.
    pub fn next_batch(&mut self, corpus: &[String]) -> Result<Vec<String>> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput("corpus"));
        }
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        while out.len() < self.cfg.batch_size {
            if self.cursor >= self.order.len() || self.order.len() != corpus.len() {
                self.order = (0..corpus.len()).collect();
                for i in (1..self.order.len()).rev() {
                    let j = self.rngs.data.index(i + 1);
                    self.order.swap(i, j);
                }
                self.cursor = 0;
            }
            out.push(corpus[self.order[self.cursor]].clone());
            self.cursor += 1;
        }
        Ok(out)
    }

    pub fn step(&mut self, corpus: &[String], vocab: &Vocabulary, lex: &SynonymLexicon) -> Result<RunRecord> {
        let texts = self.next_batch(corpus)?;
        let r = pretrain_step(&mut self.nets, &mut self.adam, &texts, vocab, lex, &self.cfg, self.step, &mut self.rngs)?;
        self.step += 1;
        Ok(r)
    }

    pub fn finished(&self) -> bool {
        self.step >= self.cfg.steps
    }
}

/// Runs `cfg.steps` pretraining steps. `clock` supplies the `seconds`
/// column (seconds since the run started); `after_step` is called after
/// every step, e.g. to write checkpoints.
pub fn pretrain(
    nets: DualNetworks,
    corpus: &[String],
    vocab: &Vocabulary,
    lex: &SynonymLexicon,
    cfg: &TrainConfig,
    mut clock: impl FnMut() -> f64,
    mut after_step: impl FnMut(&PretrainRun, &RunRecord) -> Result<()>,
) -> Result<(DualNetworks, RunLog)> {
    let mut run = PretrainRun::new(nets, cfg.clone())?;
    let mut log = RunLog::default();
    while !run.finished() {
        let mut r = run.step(corpus, vocab, lex)?;
        r.seconds = clock();
        after_step(&run, &r)?;
        log.push(r)?;
    }
    Ok((run.nets, log))
}
