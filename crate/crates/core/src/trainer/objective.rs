use alloc::vec::Vec;

use crate::error::Result;
use crate::model::{Bound, EncoderState};
use crate::numerics::{grad_check_strided, GradCheckReport, Tape, Var};
use crate::objectives::{mlm_loss_on_tape, symmetric_dcl_loss_frozen, ContrastConfig, DualNetworks};
use crate::textpipe::TokenizedBatch;

/// A fixed batch for [`frozen_objective`]: sentences, their augmentation,
/// an MLM-corrupted copy of `x` (with targets) and class labels for `x`.
#[derive(Debug, Clone)]
pub struct ObjectiveBatch {
    pub x: TokenizedBatch,
    pub x_aug: TokenizedBatch,
    pub masked: TokenizedBatch,
    pub labels: Vec<usize>,
}

/// Every head's loss with normalization statistics frozen:
/// `lambda_mlm * MLM + lambda_align * symmetric alignment + CE(classifier)`.
/// Only the online network is differentiable.
pub fn frozen_objective(
    tape: &mut Tape,
    online: &EncoderState,
    bound: &Bound,
    target: &EncoderState,
    target_bound: &Bound,
    b: &ObjectiveBatch,
    c: &ContrastConfig,
) -> Result<Var> {
    let enc = online.encode_eval(tape, bound, &b.masked)?;
    let logits = online.mlm_logits(tape, bound, enc.states)?;
    let mlm = mlm_loss_on_tape(tape, logits, b.masked.mlm_targets.as_deref().unwrap_or(&[]))?;
    let align = symmetric_dcl_loss_frozen(tape, online, bound, target, target_bound, &b.x, &b.x_aug)?;
    let pooled = online.encode_eval(tape, bound, &b.x)?.pooled;
    let cls = online.classify(tape, bound, pooled)?;
    let logp = tape.log_softmax(cls)?;
    let ll = tape.pick(logp, &b.labels)?;
    let ll = tape.mean(ll)?;
    let wm = tape.scale(mlm, c.lambda_mlm)?;
    let wa = tape.scale(align, c.lambda_align)?;
    let sum = tape.add(wm, wa)?;
    tape.sub(sum, ll)
}

/// Finite-difference check of [`frozen_objective`] over the online
/// parameters: every entry, or at most `max_per_tensor` evenly spaced
/// entries of each parameter tensor.
pub fn objective_grad_check(
    nets: &DualNetworks,
    b: &ObjectiveBatch,
    c: &ContrastConfig,
    h: f64,
    tol: f64,
    max_per_tensor: Option<usize>,
) -> Result<GradCheckReport> {
    let f = |tape: &mut Tape, vars: &[Var]| {
        let bound = Bound::from_vars(vars.to_vec());
        let tb = nets.target.bind(tape, false)?;
        frozen_objective(tape, &nets.online, &bound, &nets.target, &tb, b, c)
    };
    grad_check_strided(f, nets.online.params(), h, tol, max_per_tensor.unwrap_or(usize::MAX))
}
