//! Tiny transformer encoder with selectable normalization, masked-mean
//! pooling, projection head, tied MLM head and classifier head.

mod config;
mod encoder;
pub mod powernorm;

pub use config::{EncoderConfig, NormKind};
pub use encoder::{Bound, Encoded, EncoderState};
pub use powernorm::{PowerNormGrads, PowerNormState, PowerNormStats};

/// Whether normalization statistics are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
