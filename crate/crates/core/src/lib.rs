//! FixMatch-style semi-supervised training with an unlabeled batch-size
//! curriculum, per-class dynamic thresholds, exact pass accounting, and
//! federated and streaming simulators.

pub mod accounting;
pub mod augment;
pub mod curricula;
pub mod dataio;
pub mod engine;
pub mod error;
pub mod rng;
pub mod scenarios;

pub use error::{Error, Result};
