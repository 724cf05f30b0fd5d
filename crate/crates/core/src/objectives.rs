//! Contrastive losses, the alignment/uniformity diagnostics, the momentum
//! (EMA) target update and the MLM loss.
//!
//! Naming: `temperature` is the InfoNCE temperature, `tau_ema` the EMA
//! decay; `align_alpha` is the alignment-metric exponent (the power-norm
//! momentum lives in [`crate::model::PowerNormStats`]).

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{Bound, EncoderConfig, EncoderState, Mode};
use crate::numerics::{cosine_similarity, row_cosine, Tape, Tensor, Var};
use crate::textpipe::{TokenizedBatch, NOT_PREDICTED};

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastConfig {
    pub temperature: f64,
    pub align_alpha: f64,
    pub uniformity_t: f64,
    pub lambda_mlm: f64,
    pub lambda_align: f64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            align_alpha: 2.0,
            uniformity_t: 2.0,
            lambda_mlm: 1.0,
            lambda_align: 1.0,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.align_alpha > 0.0 && self.uniformity_t > 0.0) {
            return Err(Error::Config("temperature, align_alpha and uniformity_t must be positive".into()));
        }
        if !(self.lambda_mlm >= 0.0 && self.lambda_align >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// InfoNCE with cosine scores:
/// `-log(e^{s+/T} / (e^{s+/T} + sum_i e^{s_i-/T}))`.
pub fn info_nce(q: &[f64], k_pos: &[f64], k_negs: &[Vec<f64>], temperature: f64) -> Result<f64> {
    let mut scores = Vec::with_capacity(k_negs.len() + 1);
    scores.push(cosine_similarity(q, k_pos)? / temperature);
    for k in k_negs {
        scores.push(cosine_similarity(q, k)? / temperature);
    }
    Ok(math::log_sum_exp(&scores) - scores[0])
}

/// An anchor, its positive and its negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSample {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Mean InfoNCE over samples.
pub fn info_nce_mean(samples: &[ContrastSample], temperature: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("info_nce_mean"));
    }
    let mut total = 0.0;
    for s in samples {
        total += info_nce(&s.anchor, &s.positive, &s.negatives, temperature)?;
    }
    Ok(total / samples.len() as f64)
}

fn check_unit(v: &[f64]) -> Result<()> {
    let n = math::norm(v);
    if math::abs(n - 1.0) > 1e-6 {
        return Err(Error::Contract(format!("feature vector has norm {n}, expected 1")));
    }
    Ok(())
}

/// Splits the mean InfoNCE over unit-norm features into
/// `(alignment, uniformity)` with
///
/// ```text
/// alignment  = mean(-f_x . f_y / T)
/// uniformity = mean(log(e^{1/T} + sum_i e^{f_x . f_i- / T}))
/// ```
///
/// The uniformity term substitutes `f_x . f_y = 1`, so the two terms sum to
/// the InfoNCE value exactly when every positive pair is an exact match.
pub fn decompose_info_nce(samples: &[ContrastSample], temperature: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("decompose_info_nce"));
    }
    let (mut align, mut uniform) = (0.0, 0.0);
    for s in samples {
        check_unit(&s.anchor)?;
        check_unit(&s.positive)?;
        align -= math::dot(&s.anchor, &s.positive) / temperature;
        let mut terms = Vec::with_capacity(s.negatives.len() + 1);
        terms.push(1.0 / temperature);
        for k in &s.negatives {
            check_unit(k)?;
            terms.push(math::dot(&s.anchor, k) / temperature);
        }
        uniform += math::log_sum_exp(&terms);
    }
    let n = samples.len() as f64;
    Ok((align / n, uniform / n))
}

/// Mean of `|f(x) - f(y)|^alpha` over positive pairs; 0 means perfectly
/// aligned.
pub fn alignment_metric(pairs: &[(Vec<f64>, Vec<f64>)], align_alpha: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("alignment_metric"));
    }
    if !(align_alpha > 0.0) {
        return Err(Error::Config("align_alpha must be positive".into()));
    }
    let mut total = 0.0;
    for (x, y) in pairs {
        if x.len() != y.len() {
            return Err(Error::shape("alignment_metric", &[x.len()], &[y.len()]));
        }
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        total += math::powf(math::sqrt(d2), align_alpha);
    }
    Ok(total / pairs.len() as f64)
}

/// `log` of the mean Gaussian kernel `e^{-t |f(x) - f(y)|^2}` over all
/// ordered pairs, self-pairs included. At most 0, reached when all points
/// coincide.
pub fn uniformity_metric(points: &[Vec<f64>], t: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput("uniformity_metric"));
    }
    if !(t > 0.0) {
        return Err(Error::Config("uniformity t must be positive".into()));
    }
    let n = points.len() as f64;
    // Only i < j is evaluated; self-pairs contribute e^0 = 1 each. The mean
    // kernel is written as 1 - 2 sum_{i<j} (1 - e^{-t d_ij^2}) / n^2, which
    // is exactly 1 for coincident points and never below 1/n.
    let mut deficit = 0.0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            deficit -= libm::expm1(-t * d2);
        }
    }
    Ok(libm::log1p(-2.0 * deficit / (n * n)))
}

/// Normalized mean squared error between the online projection and the
/// target representation: `2 - 2 cos(online, target)`, in `[0, 4]`.
pub fn dcl_alignment_loss(online_proj: &[f64], target_repr: &[f64]) -> Result<f64> {
    Ok(2.0 - 2.0 * cosine_similarity(online_proj, target_repr)?)
}

/// Row-wise [`dcl_alignment_loss`] on the tape; returns a `[B]` var.
pub fn dcl_alignment_rows(tape: &mut Tape, online_proj: Var, target_repr: Var) -> Result<Var> {
    let cos = row_cosine(tape, online_proj, target_repr)?;
    let scaled = tape.scale(cos, -2.0)?;
    tape.add_scalar(scaled, 2.0)
}

/// `sum_{i<=m} |anchor - pos_i| - sum_{j<=n} |anchor - neg_j|`.
pub fn contrast_margin(anchor: &[f64], positives: &[Vec<f64>], negatives: &[Vec<f64>]) -> Result<f64> {
    let dist = |v: &Vec<f64>| -> Result<f64> {
        if v.len() != anchor.len() {
            return Err(Error::shape("contrast_margin", &[anchor.len()], &[v.len()]));
        }
        Ok(math::sqrt(anchor.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()))
    };
    let mut total = 0.0;
    for p in positives {
        total += dist(p)?;
    }
    for n in negatives {
        total -= dist(n)?;
    }
    Ok(total)
}

/// Mean cross-entropy over positions whose target is not
/// [`NOT_PREDICTED`]; a constant 0 when there are none. `logits` is
/// `[N x V]`.
pub fn mlm_loss_on_tape(tape: &mut Tape, logits: Var, targets: &[i64]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::shape("mlm_loss", &shape, &[targets.len()]));
    }
    let rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] != NOT_PREDICTED).collect();
    if rows.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    let ids = rows
        .iter()
        .map(|&i| {
            usize::try_from(targets[i])
                .ok()
                .filter(|&t| t < shape[1])
                .ok_or(Error::Vocabulary {
                    id: targets[i].max(0) as usize,
                    size: shape[1],
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let picked_rows = tape.embedding(logits, &rows)?;
    let logp = tape.log_softmax(picked_rows)?;
    let ll = tape.pick(logp, &ids)?;
    let mean = tape.mean(ll)?;
    tape.neg(mean)
}

/// Value-only [`mlm_loss_on_tape`].
pub fn mlm_loss(logits: &Tensor, targets: &[i64]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone())?;
    let loss = mlm_loss_on_tape(&mut tape, l, targets)?;
    Ok(tape.value(loss).item())
}

/// Online parameters and their momentum target.
#[derive(Debug, Clone, PartialEq)]
pub struct DualNetworks {
    pub online: EncoderState,
    pub target: EncoderState,
    pub tau_ema: f64,
}

impl DualNetworks {
    /// The target starts as an exact copy of the online network.
    pub fn new(config: EncoderConfig, tau_ema: f64) -> Result<Self> {
        let online = EncoderState::new(config)?;
        Self::from_online(online, tau_ema)
    }

    pub fn from_online(online: EncoderState, tau_ema: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau_ema) {
            return Err(Error::Config("tau_ema must lie in [0, 1]".into()));
        }
        // The online projection is aligned with the raw pooled target.
        let c = online.config();
        if c.projection_dim != c.hidden {
            return Err(Error::Config(format!(
                "projection_dim ({}) must equal hidden ({}): the projected online output is aligned with the target's pooled representation",
                c.projection_dim, c.hidden
            )));
        }
        Ok(Self {
            target: online.clone(),
            online,
            tau_ema,
        })
    }

    /// `target <- tau_ema * target + (1 - tau_ema) * online`, parameter by
    /// parameter. Normalization statistics are not parameters and are left
    /// alone.
    pub fn ema_update(&mut self) -> Result<()> {
        ema_update(&mut self.target, &self.online, self.tau_ema)
    }
}

/// Free-standing form of [`DualNetworks::ema_update`].
pub fn ema_update(target: &mut EncoderState, online: &EncoderState, tau_ema: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau_ema) {
        return Err(Error::Config("tau_ema must lie in [0, 1]".into()));
    }
    if target.names() != online.names() {
        return Err(Error::Contract("online and target parameter sets differ".into()));
    }
    for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
        if t.shape() != o.shape() {
            return Err(Error::shape("ema_update", t.shape(), o.shape()));
        }
        for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
            *a = tau_ema * *a + (1.0 - tau_ema) * b;
        }
    }
    Ok(())
}

/// Vars produced by [`symmetric_dcl_loss_on_tape`].
#[derive(Debug, Clone, Copy)]
pub struct SymmetricLoss {
    pub loss: Var,
    /// Online pooled representations of `X` and `X'`.
    pub online_x: Var,
    pub online_aug: Var,
}

/// Symmetric alignment loss recorded on `tape`:
///
/// `mean_b [ L(g(f_on(X)_b), f_tg(X')_b) + L(g(f_on(X')_b), f_tg(X)_b) ]`
///
/// with `L` = [`dcl_alignment_loss`]. Target representations pass through a
/// stop-gradient, so only online parameters receive gradients.
#[allow(clippy::too_many_arguments)]
pub fn symmetric_dcl_loss_on_tape(
    tape: &mut Tape,
    online: &mut EncoderState,
    online_bound: &Bound,
    target: &mut EncoderState,
    target_bound: &Bound,
    x: &TokenizedBatch,
    x_aug: &TokenizedBatch,
    mode: Mode,
) -> Result<SymmetricLoss> {
    if x.batch_size() != x_aug.batch_size() {
        return Err(Error::shape("symmetric_dcl_loss", &[x.batch_size()], &[x_aug.batch_size()]));
    }
    let on_x = online.encode(tape, online_bound, x, mode)?;
    let tg_aug = target.encode(tape, target_bound, x_aug, mode)?;
    let on_aug = online.encode(tape, online_bound, x_aug, mode)?;
    let tg_x = target.encode(tape, target_bound, x, mode)?;
    let tg_aug = tape.stop_gradient(tg_aug.pooled)?;
    let tg_x = tape.stop_gradient(tg_x.pooled)?;
    let q = online.project(tape, online_bound, on_x.pooled, mode)?;
    let q_aug = online.project(tape, online_bound, on_aug.pooled, mode)?;
    if tape.shape(q) != tape.shape(tg_aug) {
        return Err(Error::shape("symmetric_dcl_loss", tape.shape(q), tape.shape(tg_aug)));
    }
    let l1 = dcl_alignment_rows(tape, q, tg_aug)?;
    let l2 = dcl_alignment_rows(tape, q_aug, tg_x)?;
    let both = tape.add(l1, l2)?;
    let loss = tape.mean(both)?;
    Ok(SymmetricLoss {
        loss,
        online_x: on_x.pooled,
        online_aug: on_aug.pooled,
    })
}

/// [`symmetric_dcl_loss_on_tape`] with every normalization statistic
/// frozen; takes both networks by shared reference.
pub fn symmetric_dcl_loss_frozen(
    tape: &mut Tape,
    online: &EncoderState,
    online_bound: &Bound,
    target: &EncoderState,
    target_bound: &Bound,
    x: &TokenizedBatch,
    x_aug: &TokenizedBatch,
) -> Result<Var> {
    if x.batch_size() != x_aug.batch_size() {
        return Err(Error::shape("symmetric_dcl_loss", &[x.batch_size()], &[x_aug.batch_size()]));
    }
    let mut half = |a: &TokenizedBatch, b: &TokenizedBatch| -> Result<Var> {
        let on = online.encode_eval(tape, online_bound, a)?;
        let tg = target.encode_eval(tape, target_bound, b)?;
        let tg = tape.stop_gradient(tg.pooled)?;
        let q = online.project_eval(tape, online_bound, on.pooled)?;
        if tape.shape(q) != tape.shape(tg) {
            return Err(Error::shape("symmetric_dcl_loss", tape.shape(q), tape.shape(tg)));
        }
        dcl_alignment_rows(tape, q, tg)
    };
    let l1 = half(x, x_aug)?;
    let l2 = half(x_aug, x)?;
    let both = tape.add(l1, l2)?;
    tape.mean(both)
}

/// Value of the symmetric loss; training mode updates normalization
/// statistics.
pub fn symmetric_dcl_loss(nets: &mut DualNetworks, x: &TokenizedBatch, x_aug: &TokenizedBatch, mode: Mode) -> Result<f64> {
    let mut tape = Tape::new();
    let ob = nets.online.bind(&mut tape, true)?;
    let tb = nets.target.bind(&mut tape, false)?;
    let out = symmetric_dcl_loss_on_tape(&mut tape, &mut nets.online, &ob, &mut nets.target, &tb, x, x_aug, mode)?;
    Ok(tape.value(out.loss).item())
}
