use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::math;

/// Outcome of comparing tape gradients against central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Denominator floor for the relative error, so entries whose true
/// gradient is essentially zero are judged on an absolute scale.
const REL_FLOOR: f64 = 1e-3;

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::shape("grad_check", tape.shape(out), &[]));
    }
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite("grad_check"));
    }
    Ok((tape, vars, out))
}

/// Compares the tape gradient of the scalar function `f` with central
/// differences of step `h`, elementwise over every input.
///
/// The relative error of one entry is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_strided(f, inputs, h, tol, usize::MAX)
}

/// Like [`grad_check`], but visits at most `max_per_input` evenly spaced
/// entries of each input (always including the first).
pub fn grad_check_strided<F>(f: F, inputs: &[Tensor], h: f64, tol: f64, max_per_input: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if max_per_input == 0 {
        return Err(Error::Config("grad_check must visit at least one entry per input".into()));
    }
    if !(h > 0.0) {
        return Err(Error::Config("grad_check step must be positive".into()));
    }
    let (tape, vars, out) = eval(&f, inputs)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut checked = 0;
    for (ti, an) in analytic.iter().enumerate() {
        let n = inputs[ti].len();
        let stride = n.div_ceil(max_per_input).max(1);
        for j in (0..n).step_by(stride) {
            let orig = inputs[ti].data()[j];
            work[ti].data_mut()[j] = orig + h;
            let plus = eval(&f, &work)?;
            let fp = plus.0.value(plus.2).item();
            work[ti].data_mut()[j] = orig - h;
            let minus = eval(&f, &work)?;
            let fm = minus.0.value(minus.2).item();
            work[ti].data_mut()[j] = orig;

            let numeric = (fp - fm) / (2.0 * h);
            let a = an.data()[j];
            let abs = math::abs(a - numeric);
            let rel = abs / math::abs(a).max(math::abs(numeric)).max(REL_FLOOR);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(abs);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        checked,
        tol,
        passed: max_rel < tol,
    })
}
