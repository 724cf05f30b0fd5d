//! Disentangled contrastive learning for robust text representations.
//!
//! This crate is the allocation-only algorithmic core: a small reverse-mode
//! tensor engine, a whole-word text pipeline, a tiny transformer encoder with
//! selectable normalization (layer, power, none), the alignment and
//! uniformity objectives, the momentum-target pretraining loop and the
//! robustness evaluation suite (invariance tests, PWWS attacks, cosine
//! analysis, PCA projection).
//!
//! Everything touching files, clocks or the command line lives in the `dcl`
//! companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod math;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod rng;
pub mod robusteval;
pub mod textpipe;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Tape, Tensor, Var};
pub use rng::SeededStream;
