//! Power normalization.
//!
//! Activations are divided per feature by a running quadratic mean `psi`
//! instead of being centred and scaled by batch mean and variance:
//!
//! ```text
//! xhat      = x / psi_{t-1}
//! y         = gamma * xhat + beta
//! psi_t^2   = psi_{t-1}^2 + (1 - alpha) * (psi_B^2 - psi_{t-1}^2)
//! ```
//!
//! where `psi_B^2` is the per-feature mean of `x^2` over the batch. The
//! backward pass treats `psi_{t-1}` as a constant, so gradients are
//! bounded by `|gamma / psi|_inf * |dL/dy|`.
//!
//! During the first `warmup` training steps the forward pass divides by the
//! batch statistic `sqrt(psi_B^2)` itself. The first training step seeds
//! `psi^2 = psi_B^2`; every later training step applies the running update.

use alloc::vec;
use alloc::vec::Vec;

use super::Mode;
use crate::error::{Error, Result};
use crate::math;
use crate::numerics::Tensor;

/// Smallest running quadratic mean we divide by.
pub const PSI2_FLOOR: f64 = 1e-12;

/// Running statistics of one power-norm site.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNormStats {
    /// Running quadratic mean `psi^2`, one entry per feature.
    pub psi2: Vec<f64>,
    pub momentum: f64,
    /// Training forward passes seen so far.
    pub step: u64,
    pub warmup: u64,
    /// How many feature entries have been clamped at [`PSI2_FLOOR`].
    pub clamped: u64,
}

impl PowerNormStats {
    pub fn new(dim: usize, momentum: f64, warmup: u64) -> Self {
        Self {
            psi2: vec![1.0; dim],
            momentum,
            step: 0,
            warmup,
            clamped: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.psi2.len()
    }

    /// Per-feature divisor `psi` for this forward pass, updating the
    /// running statistic in training mode. `row_mask`, when given, selects
    /// which rows of `x` count towards the batch statistic.
    pub fn divisor(&mut self, x: &Tensor, row_mask: Option<&[u8]>, mode: Mode) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.last_dim() != d {
            return Err(Error::shape("power_norm", x.shape(), &[d]));
        }
        if mode == Mode::Eval {
            return Ok(self.psi2.iter().map(|&p| math::sqrt(p)).collect());
        }
        let batch = batch_quadratic_mean(x, row_mask)?;
        let psi = if self.step < self.warmup {
            let mut b = batch.clone();
            self.clamp(&mut b);
            b.iter().map(|&p| math::sqrt(p)).collect()
        } else {
            self.psi2.iter().map(|&p| math::sqrt(p)).collect()
        };
        if self.step == 0 && self.warmup > 0 {
            self.psi2 = batch;
        } else {
            let a = self.momentum;
            for (p, b) in self.psi2.iter_mut().zip(&batch) {
                *p += (1.0 - a) * (b - *p);
            }
        }
        let mut p2 = core::mem::take(&mut self.psi2);
        self.clamp(&mut p2);
        self.psi2 = p2;
        self.step += 1;
        Ok(psi)
    }

    fn clamp(&mut self, v: &mut [f64]) {
        for p in v.iter_mut() {
            if *p < PSI2_FLOOR {
                *p = PSI2_FLOOR;
                self.clamped += 1;
            }
        }
    }
}

/// Per-feature mean of `x^2` over the (selected) rows: `psi_B^2`.
pub fn batch_quadratic_mean(x: &Tensor, row_mask: Option<&[u8]>) -> Result<Vec<f64>> {
    let d = x.last_dim();
    let mut acc = vec![0.0; d];
    let mut count = 0usize;
    for (i, r) in x.rows().enumerate() {
        if row_mask.is_some_and(|m| m[i] == 0) {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v * v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyInput("power_norm batch statistic"));
    }
    let inv = 1.0 / count as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Backward pass with the divisor held constant. Returns
/// `(dL/dx, dL/dgamma, dL/dbeta)` for row-major `x` with `d` features.
pub fn frozen_backward(x: &[f64], gamma: &[f64], inv_psi: &[f64], dy: &[f64], d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for ((xr, gr), dxr) in x.chunks(d).zip(dy.chunks(d)).zip(dx.chunks_mut(d)) {
        for j in 0..d {
            dxr[j] = gamma[j] * inv_psi[j] * gr[j];
            dgamma[j] += gr[j] * xr[j] * inv_psi[j];
            dbeta[j] += gr[j];
        }
    }
    (dx, dgamma, dbeta)
}

/// Stand-alone power-norm layer: affine parameters plus running
/// statistics, with an explicit backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub stats: PowerNormStats,
    saved: Option<(Tensor, Vec<f64>)>,
}

/// Gradients returned by [`PowerNormState::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNormGrads {
    pub dx: Tensor,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

impl PowerNormState {
    pub fn new(dim: usize, momentum: f64, warmup: u64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Config("power-norm momentum must lie in (0, 1)".into()));
        }
        Ok(Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            stats: PowerNormStats::new(dim, momentum, warmup),
            saved: None,
        })
    }

    /// `x` is `[rows x d]` (any leading axes are flattened).
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Train && x.is_empty() {
            return Err(Error::EmptyInput("power_norm"));
        }
        let psi = self.stats.divisor(x, None, mode)?;
        let inv_psi: Vec<f64> = psi.iter().map(|p| 1.0 / p).collect();
        let d = self.gamma.len();
        let mut out = Vec::with_capacity(x.len());
        for r in x.rows() {
            for j in 0..d {
                out.push(self.gamma[j] * r[j] * inv_psi[j] + self.beta[j]);
            }
        }
        let y = Tensor::new(x.shape().to_vec(), out)?;
        if !y.all_finite() {
            return Err(Error::NonFinite("power_norm"));
        }
        self.saved = Some((x.clone(), inv_psi));
        Ok(y)
    }

    /// Gradients of the most recent forward call.
    pub fn backward(&self, dy: &Tensor) -> Result<PowerNormGrads> {
        let (x, inv_psi) = self
            .saved
            .as_ref()
            .ok_or_else(|| Error::Contract("power_norm backward called before forward".into()))?;
        if dy.shape() != x.shape() {
            return Err(Error::shape("power_norm backward", dy.shape(), x.shape()));
        }
        let (dx, dgamma, dbeta) = frozen_backward(x.data(), &self.gamma, inv_psi, dy.data(), self.gamma.len());
        Ok(PowerNormGrads {
            dx: Tensor::new(x.shape().to_vec(), dx)?,
            dgamma,
            dbeta,
        })
    }

    pub fn psi2(&self) -> &[f64] {
        &self.stats.psi2
    }
}
