//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_strided, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// `u.v / (|u| |v|)`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_similarity", &[u.len()], &[v.len()]));
    }
    let (nu, nv) = (math::norm(u), math::norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateVector("cosine_similarity"));
    }
    Ok(math::dot(u, v) / (nu * nv))
}

/// Plain (untaped) softmax of one vector.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = math::log_sum_exp(x);
    x.iter().map(|&v| math::exp(v - lse)).collect()
}

/// Returns `v / |v|`.
pub fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = math::norm(v);
    if n == 0.0 {
        return Err(Error::DegenerateVector("normalized"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Row-wise cosine similarity between two `[n x d]` tape values, recorded
/// as differentiable ops. Returns a `[n]` var.
pub fn row_cosine(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let prod = tape.mul(a, b)?;
    let rank = tape.shape(prod).len();
    let dots = tape.sum_axis(prod, rank - 1)?;
    let na = tape.l2_norm(a)?;
    let nb = tape.l2_norm(b)?;
    let denom = tape.mul(na, nb)?;
    tape.div(dots, denom)
}
