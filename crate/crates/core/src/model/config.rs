use alloc::format;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    Layer,
    Power,
    None,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Layer => "layer",
            NormKind::Power => "power",
            NormKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "layer" => Some(NormKind::Layer),
            "power" => Some(NormKind::Power),
            "none" => Some(NormKind::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_len: usize,
    pub norm: NormKind,
    pub projection_dim: usize,
    /// 2 for linear-gelu-linear, 1 for a single linear map.
    pub projection_layers: usize,
    /// Batch-axis normalization in the projection head's hidden layer
    /// instead of the encoder's normalization kind. Only used for the
    /// normalization comparison in the analysis tooling.
    pub projection_batch_norm: bool,
    pub num_classes: usize,
    pub powernorm_momentum: f64,
    pub powernorm_warmup: u64,
    pub norm_eps: f64,
    pub init_seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults for a given vocabulary size.
    pub fn small(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 64,
            layers: 2,
            heads: 4,
            ff: 128,
            max_len: 32,
            norm: NormKind::Power,
            projection_dim: 64,
            projection_layers: 2,
            projection_batch_norm: false,
            num_classes: 2,
            powernorm_momentum: 0.9,
            powernorm_warmup: 100,
            norm_eps: 1e-5,
            init_seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Number of normalization sites: embeddings, two per layer, and the
    /// projection head's hidden layer.
    pub fn norm_sites(&self) -> usize {
        2 + 2 * self.layers
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.vocab_size <= crate::textpipe::RESERVED {
            return fail("vocab_size must exceed the 5 reserved tokens");
        }
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden dim {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.layers == 0 || self.ff == 0 {
            return fail("layers and ff must be positive");
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2");
        }
        if self.projection_dim < 2 {
            return fail("projection_dim must be at least 2");
        }
        if !(1..=2).contains(&self.projection_layers) {
            return fail("projection_layers must be 1 or 2");
        }
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2");
        }
        if !(self.powernorm_momentum > 0.0 && self.powernorm_momentum < 1.0) {
            return fail("powernorm_momentum must lie in (0, 1)");
        }
        if !(self.norm_eps > 0.0) {
            return fail("norm_eps must be positive");
        }
        Ok(())
    }
}
