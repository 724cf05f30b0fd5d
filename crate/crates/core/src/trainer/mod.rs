//! Momentum-aligned pretraining (MLM + symmetric alignment with an EMA
//! target) and supervised fine-tuning.

mod adam;
mod finetune;
mod objective;
mod pretrain;

pub use adam::Adam;
pub use finetune::{accuracy, finetune, predict, FinetuneRun};
pub use objective::{frozen_objective, objective_grad_check, ObjectiveBatch};
pub use pretrain::{augmented_pair, pair_metrics, pretrain, pretrain_step, PretrainRun, StepRngs};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::math;
use crate::objectives::ContrastConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Steps over which the learning rate decays to zero; `None` means
    /// `steps`.
    pub decay_steps: Option<u64>,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub aug_p: f64,
    pub mlm_rate: f64,
    pub tau_ema: f64,
    pub contrast: ContrastConfig,
    pub max_len: usize,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            decay_steps: None,
            batch_size: 16,
            steps: 1000,
            seed: 0,
            aug_p: 0.15,
            mlm_rate: 0.15,
            tau_ema: 0.99,
            contrast: ContrastConfig::default(),
            max_len: 32,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0) {
            return fail("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return fail("Adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.aug_p) || !(0.0..=1.0).contains(&self.mlm_rate) {
            return fail("aug_p and mlm_rate must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau_ema) {
            return fail("tau_ema must lie in [0, 1]");
        }
        if self.decay_steps == Some(0) {
            return fail("decay_steps must be positive");
        }
        self.contrast.validate()
    }

    pub fn horizon(&self) -> u64 {
        self.decay_steps.unwrap_or(self.steps).max(1)
    }
}

/// `base_lr * (1 + cos(pi * step / total)) / 2`; `step` is clamped to
/// `total`.
pub fn cosine_lr(step: u64, total: u64, base_lr: f64) -> f64 {
    let total = total.max(1);
    let s = step.min(total) as f64 / total as f64;
    base_lr * 0.5 * (1.0 + math::cos(core::f64::consts::PI * s))
}

/// One optimizer step's measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub step: u64,
    pub total_loss: f64,
    pub mlm_loss: f64,
    pub align_loss: f64,
    pub lr: f64,
    pub align_metric: f64,
    pub uniformity_metric: f64,
    pub seconds: f64,
}

pub const RUNLOG_HEADER: &str = "step,total_loss,mlm_loss,align_loss,lr,align_metric,uniformity_metric,seconds";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
}

impl RunLog {
    /// Appends a record, enforcing increasing steps and finite values.
    pub fn push(&mut self, r: RunRecord) -> Result<()> {
        if self.records.last().is_some_and(|last| last.step >= r.step) {
            return Err(Error::Contract(format!("run log step {} is not increasing", r.step)));
        }
        let vals = [r.total_loss, r.mlm_loss, r.align_loss, r.lr, r.align_metric, r.uniformity_metric, r.seconds];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("run log record"));
        }
        self.records.push(r);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(RUNLOG_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.step, r.total_loss, r.mlm_loss, r.align_loss, r.lr, r.align_metric, r.uniformity_metric, r.seconds
            );
        }
        s
    }
}
